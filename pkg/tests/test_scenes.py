import numpy as np
import pytest
from numpy.testing import assert_allclose

from bimanual_mppi.scenes import BUILTIN_SCENES, PLANAR_HOME, default_scene, planar_scene, scene_from_dict
from bimanual_mppi.world import KinematicSurrogate, WorldModelError


@pytest.mark.parametrize("factory", [planar_scene, default_scene])
@pytest.mark.parametrize("objects", [("tray",), ("ball",), ("cube",)])
def test_builtin_home_is_collision_free(factory, objects):
    scene = factory(objects)
    state = KinematicSurrogate(scene).initial_state()
    assert np.all(state.distances > 0)


def test_planar_scene_layout():
    scene = planar_scene()
    assert scene.dof == 6
    assert_allclose(scene.home, PLANAR_HOME * 2)
    assert [s.name for s in scene.spheres] == ["post_left", "post_right"]
    assert [b.name for b in scene.boxes] == ["shelf"]
    assert scene.ball is None and scene.cube is None


def test_ur_pair_has_twelve_joints():
    assert default_scene().dof == 12


def test_without_obstacles():
    scene = planar_scene(("ball",), with_obstacles=False)
    assert scene.spheres == () and scene.boxes == ()
    assert all("obstacle" not in p.tags for p in scene.collision_pairs())


def test_unknown_object_kind():
    with pytest.raises(WorldModelError):
        planar_scene(("plate",))


def test_builtin_names():
    assert sorted(BUILTIN_SCENES) == ["planar", "ur_pair"]


class TestSceneFromDict:
    def test_defaults_match_planar_scene(self):
        scene = scene_from_dict({})
        assert scene.name == "planar"
        assert scene.tray is not None
        assert len(scene.collision_pairs()) == len(planar_scene().collision_pairs())

    def test_extra_obstacles_are_appended(self):
        scene = scene_from_dict(
            {
                "spheres": [{"name": "lamp", "center": [0, 0.3, 0.5], "radius": 0.05}],
                "boxes": [{"name": "wall", "center": [0, 0.5, 0.5], "half_extents": [1, 0.01, 0.5]}],
            }
        )
        assert [s.name for s in scene.spheres][-1] == "lamp"
        assert [b.name for b in scene.boxes][-1] == "wall"

    def test_sphere_on_a_link_gives_negative_distance(self):
        scene = scene_from_dict(
            {"objects": [], "with_obstacles": False, "spheres": [{"name": "in_link", "center": [-0.55, 0, 0.175], "radius": 0.02}]}
        )
        d = KinematicSurrogate(scene).initial_state().distances
        labels = [p.label for p in scene.collision_pairs()]
        assert d[labels.index("left.link0|in_link")] == pytest.approx(-0.06, abs=1e-3)

    def test_object_positions_move_objects(self):
        scene = scene_from_dict({"objects": ["tray", "cube"], "object_positions": {"tray": [0, 0.1, 0.05]}})
        assert_allclose(scene.tray.pose.position, [0, 0.1, 0.05])
        assert_allclose(scene.cube.pose.position, planar_scene(("cube",)).cube.pose.position)

    def test_tolerance_override(self):
        scene = scene_from_dict({"tolerances": {"position": 0.03}})
        assert scene.tolerances.position == 0.03
        assert scene.tolerances.orientation == 0.15

    @pytest.mark.parametrize(
        "doc",
        [
            {"builtin": "kuka"},
            {"objects": ["plate"]},
            {"object_positions": {"ball": [0, 0, 0.1]}},
            {"object_positions": {"tray": [0, 0]}},
            {"spheres": [{"name": "s", "center": [0, 0, 1]}]},
            {"spheres": [{"name": "s", "center": [0, 0, 1], "radius": -1}]},
            {"spheres": [{"name": "s", "center": "up", "radius": 0.1}]},
            {"boxes": [{"name": "shelf", "center": [0, 0, 1], "half_extents": [1, 1, 1]}]},
            {"tolerances": {"slack": 1}},
        ],
    )
    def test_rejects(self, doc):
        with pytest.raises(WorldModelError):
            scene_from_dict(doc)
