import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bimanual_mppi.trajectory import Pose, VelocitySequence
from bimanual_mppi.world import (
    ArmModel,
    JointIntegrator,
    JointState,
    KinematicSurrogate,
    SceneDescription,
    Tray,
    WorldModelError,
    arm_kinematics,
    attach_rules,
    forward_kinematics,
    midpoint_frame,
    rollout,
    signed_distances,
)

from gantry import BALL, CUBE, IDENTITY, TRAY, ball_gantry, cube_gantry, gantry, gantry_scene, same_motion, tray_gantry

DT = 0.1


@pytest.fixture
def tray_world():
    scene = tray_gantry()
    return scene, KinematicSurrogate(scene)


@pytest.fixture
def ball_world():
    scene = ball_gantry()
    return scene, KinematicSurrogate(scene)


class TestForwardKinematics:
    def test_planar_two_link(self):
        arm = ArmModel(
            "two_link",
            Pose(np.array([0.5, 0.0, 0.0]), IDENTITY),
            np.array([[0, 0, 1], [0, 0, 1]], dtype=float),
            np.array([[1.0, 0, 0], [1.0, 0, 0]]),
            np.array([0.05, 0.05]),
        )
        tip, _, starts, ends = arm_kinematics(arm, np.array([0.0, np.pi / 2]))
        assert_allclose(tip, [1.5, 1.0, 0.0], atol=1e-12)
        assert_allclose(starts[1], ends[0])

    def test_zero_joints_give_reference_poses(self, tray_scene):
        ee1, ee2 = forward_kinematics(tray_scene, np.zeros(6))
        assert_allclose(ee1.position, [0.20, 0.0, 0.0], atol=1e-12)
        assert_allclose(ee2.position, [-0.20, 0.0, 0.0], atol=1e-12)
        assert_allclose(ee1.orientation, IDENTITY, atol=1e-12)

    def test_revolute_periodicity(self, tray_scene, rng):
        joints = rng.uniform(-1, 1, size=6)
        a = forward_kinematics(tray_scene, joints)
        b = forward_kinematics(tray_scene, joints + 2 * np.pi)
        for pa, pb in zip(a, b):
            assert_allclose(pa.position, pb.position, atol=1e-9)
            assert_allclose(pa.orientation, pb.orientation, atol=1e-9)

    def test_dimension_mismatch(self, tray_scene):
        with pytest.raises(WorldModelError):
            forward_kinematics(tray_scene, np.zeros(5))

    def test_prismatic_gantry(self):
        scene = gantry_scene([0, 0, 0], [1, 0, 0])
        ee1, ee2 = forward_kinematics(scene, np.array([0.1, 0.2, 0.3, 0.1, 0.0, 0.0]))
        assert_allclose(ee1.position, [0.1, 0.2, 0.3], atol=1e-12)
        assert_allclose(ee2.position, [0.9, 0.0, 0.0], atol=1e-12)


class TestSignedDistances:
    def test_home_is_collision_free(self, tray_scene, ball_scene, cube_scene):
        for scene in (tray_scene, ball_scene, cube_scene):
            state = KinematicSurrogate(scene).initial_state()
            d = signed_distances(scene, state)
            assert d.shape == (len(scene.collision_pairs()),)
            assert np.all(d > 0)

    def test_mask_removes_columns(self, ball_scene):
        surrogate = KinematicSurrogate(ball_scene)
        state = surrogate.initial_state()
        full = surrogate.signed_distances(state, frozenset())
        masked = surrogate.signed_distances(state, frozenset({"ball"}))
        pairs = ball_scene.collision_pairs(frozenset({"ball"}))
        assert masked.size == len(pairs) < full.size
        assert all("ball" not in p.tags for p in pairs)
        keep = [i for i, p in enumerate(ball_scene.collision_pairs()) if "ball" not in p.tags]
        assert_allclose(masked, full[keep])

    def test_grippers_not_paired_with_objects(self, tray_scene):
        labels = [p.label for p in tray_scene.collision_pairs() if "tray" in p.tags]
        assert labels == ["left.link0|tray", "left.link1|tray", "right.link0|tray", "right.link1|tray"]

    def test_cross_arm_pairs_match_geometry(self, tray_scene):
        state = KinematicSurrogate(tray_scene).initial_state()
        d = signed_distances(tray_scene, state)
        labels = [p.label for p in tray_scene.collision_pairs()]
        tip_gap = d[labels.index("left.link2|right.link2")]
        gap = np.linalg.norm(state.ee_positions[0] - state.ee_positions[1])
        assert tip_gap == pytest.approx(gap - 0.04, abs=1e-9)


class TestAttachRules:
    def test_at_grasp_poses_tray_is_grasped(self, tray_world):
        scene, surrogate = tray_world
        assert surrogate.initial_state().grasp.tray

    def test_far_away_tray_is_free(self):
        scene = gantry_scene([-0.24, 0.0, 0.05], [0.24, 0.0, 0.05], tray=TRAY)
        state = KinematicSurrogate(scene).initial_state()
        assert not attach_rules(scene, state).tray

    def test_ball_held_at_contact_geometry(self, ball_world):
        _, surrogate = ball_world
        assert surrogate.initial_state().grasp.ball

    def test_ball_separation_drift_within_release(self, ball_world):
        _, surrogate = ball_world
        state = surrogate.initial_state()
        # both x joints at -v: arms move apart by 2 v dt = 0.9 cm
        apart = np.array([-0.045, 0, 0, -0.045, 0, 0])
        after = surrogate.step(state, apart, DT)
        assert after.grasp.ball

    def test_cube_taken_by_first_arm_then_transferred(self):
        scene = cube_gantry()
        surrogate = KinematicSurrogate(scene)
        state = surrogate.initial_state()
        assert state.grasp.cube_holder == 1
        after = surrogate.step(state, np.zeros(6), DT)
        assert after.grasp.cube_holder == 2
        assert_allclose(after.cube.position, CUBE.pose.position, atol=1e-12)

    def test_second_arm_alone_cannot_take_free_cube(self):
        handles = CUBE.handle_positions()
        scene = gantry_scene([-0.8, 0.0, 0.05], handles[1], cube=CUBE)
        surrogate = KinematicSurrogate(scene)
        state = surrogate.initial_state()
        assert state.grasp.cube_holder == 0
        after = surrogate.step(state, np.zeros(6), DT)
        assert after.grasp.cube_holder == 0
        assert attach_rules(scene, after).cube_holder == 0

    def test_release_beyond_twice_tolerance(self, tray_world):
        scene, surrogate = tray_world
        state = surrogate.initial_state()
        # the right arm leaves along its own x axis: 8 cm in one step
        after = surrogate.step(state, np.array([0, 0, 0, 0.8, 0, 0]), DT)
        assert not after.grasp.tray
        assert_allclose(after.tray.position, TRAY.pose.position, atol=1e-12)


class TestRollout:
    def test_zero_sequence_is_fixed_point(self, tray_scene):
        surrogate = KinematicSurrogate(tray_scene)
        state = surrogate.initial_state()
        result = rollout(tray_scene, state, VelocitySequence(np.zeros((5, 6)), DT), DT)
        assert len(result) == 6
        for s in result.states:
            assert_array_equal(s.joints, state.joints)
            assert_allclose(s.ee_positions, state.ee_positions, atol=1e-12)
            assert_allclose(s.distances, state.distances, atol=1e-12)

    def test_grasped_tray_translates_with_arms(self, tray_world):
        _, surrogate = tray_world
        state = surrogate.initial_state()
        up = np.tile([0, 0, 0.2, 0, 0, 0.2], (4, 1))
        result = surrogate.rollout(state, up, DT)
        z = np.array([s.tray.position[2] for s in result.states])
        assert all(s.grasp.tray for s in result.states)
        assert_allclose(np.diff(z), np.full(4, 0.2 * DT), atol=1e-12)

    def test_tray_rigidly_attached(self, tray_world, rng):
        _, surrogate = tray_world
        state = surrogate.initial_state()
        moves = same_motion(rng.uniform(-0.1, 0.1, size=3))
        result = surrogate.rollout(state, np.tile(moves, (6, 1)), DT)
        gaps = [np.linalg.norm(s.tray.position - midpoint_frame(*s.ee_positions)[0]) for s in result.states]
        assert all(s.grasp.tray for s in result.states)
        assert np.ptp(gaps) <= 1e-9

    def test_ball_drop_freezes_position(self, ball_world):
        _, surrogate = ball_world
        state = surrogate.initial_state()
        seq = np.array([[0, 0, 0.2, 0, 0, 0.2], [-0.15, 0, 0, -0.15, 0, 0], [0, 0, 0.2, 0, 0, 0.2]])
        result = surrogate.rollout(state, seq, DT)
        held = [s.grasp.ball for s in result.states]
        assert held == [True, True, False, False]
        assert_allclose(result.states[1].ball, BALL.center + [0, 0, 0.02], atol=1e-12)
        assert_allclose(result.states[3].ball, result.states[1].ball, atol=1e-12)

    def test_deterministic(self, tray_scene, rng):
        surrogate = KinematicSurrogate(tray_scene)
        state = surrogate.initial_state()
        seqs = rng.normal(scale=0.3, size=(8, 5, 6))
        a = surrogate.rollout_batch(state, seqs, DT)
        b = surrogate.rollout_batch(state, seqs, DT)
        assert_array_equal(a.joints, b.joints)
        assert_array_equal(a.distances, b.distances)
        assert_array_equal(a.tray.positions, b.tray.positions)

    def test_split_horizon_matches_full(self, tray_world, rng):
        _, surrogate = tray_world
        state = surrogate.initial_state()
        seq = np.tile(same_motion(rng.uniform(-0.1, 0.1, size=3)), (6, 1))
        full = surrogate.rollout(state, seq, DT)
        first = surrogate.rollout(state, seq[:3], DT)
        second = surrogate.rollout(first.states[-1], seq[3:], DT)
        end_a, end_b = full.states[-1], second.states[-1]
        assert_allclose(end_a.joints, end_b.joints, atol=1e-12)
        assert_allclose(end_a.ee_positions, end_b.ee_positions, atol=1e-12)
        assert_allclose(end_a.tray.position, end_b.tray.position, atol=1e-9)
        assert end_a.grasp == end_b.grasp

    def test_batch_and_single_views_agree(self, tray_scene, rng):
        surrogate = KinematicSurrogate(tray_scene)
        state = surrogate.initial_state()
        seqs = rng.normal(scale=0.3, size=(3, 4, 6))
        batch = surrogate.rollout_batch(state, seqs, DT)
        single = surrogate.rollout(state, seqs[2], DT)
        assert_allclose(batch.joints[2], single.joints)
        round_trip = single.batch()
        assert_allclose(round_trip.distances[0], batch.distances[2])
        assert_allclose(round_trip.tray.positions[0], batch.tray.positions[2])

    def test_end_effector_velocity_is_backward_difference(self, tray_scene, rng):
        surrogate = KinematicSurrogate(tray_scene)
        batch = surrogate.rollout_batch(surrogate.initial_state(), rng.normal(scale=0.3, size=(2, 4, 6)), DT)
        assert_allclose(batch.ee_velocities[:, 1:], np.diff(batch.ee_positions, axis=1) / DT)

    def test_rejects_bad_shapes(self, tray_scene):
        surrogate = KinematicSurrogate(tray_scene)
        with pytest.raises(WorldModelError):
            surrogate.rollout_batch(surrogate.initial_state(), np.zeros((2, 4, 5)), DT)
        with pytest.raises(WorldModelError):
            surrogate.rollout_batch(surrogate.initial_state(), np.zeros((2, 4, 6)), 0.0)


def test_midpoint_frame_axes():
    origin, q = midpoint_frame(np.array([-1.0, 0.0, 0.5]), np.array([1.0, 0.0, 0.5]))
    assert_allclose(origin, [0.0, 0.0, 0.5])
    assert_allclose(q, IDENTITY, atol=1e-12)


def test_vertical_midpoint_frame_falls_back_to_world_y():
    _, q = midpoint_frame(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    assert abs(np.linalg.norm(q) - 1.0) < 1e-12


def test_joint_integrator():
    world = JointIntegrator(2)
    out = world.rollout_batch(JointState(np.zeros(2)), np.ones((3, 4, 2)), 0.5)
    assert out.joints.shape == (3, 5, 2)
    assert_allclose(out.joints[:, -1], np.full((3, 2), 2.0))
    assert_allclose(world.step(JointState([1.0, 1.0]), [2.0, 0.0], 0.5).joints, [2.0, 1.0])


def test_scene_validation():
    with pytest.raises(WorldModelError):
        Tray(TRAY.pose, TRAY.half_extents, np.array([[-0.3, 0, 0], [0.14, 0, 0]]), TRAY.grasp_orientations, 0.28)
    with pytest.raises(WorldModelError):
        ArmModel("bad", Pose(np.zeros(3), IDENTITY), np.zeros((1, 3)), np.zeros((1, 3)), np.ones(1))
    with pytest.raises(WorldModelError):
        SceneDescription(arms=(gantry("only", [0, 0, 0]),), home=np.zeros(3))
