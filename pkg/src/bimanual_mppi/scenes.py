"""Built-in dual-arm scenes and construction from config documents."""
from __future__ import annotations

import logging
from typing import Any, Iterable, Mapping

import numpy as np

from .trajectory import Pose, TrajectoryError, quat_from_axis_angle
from .world import (
    ArmModel,
    AttachTolerances,
    Ball,
    BoxObstacle,
    Cube,
    SceneDescription,
    SphereObstacle,
    Tray,
    WorldModelError,
)

logger = logging.getLogger(__name__)

OBJECT_KINDS = ("tray", "ball", "cube")

_Y = np.array([0.0, 1.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])
FACING = quat_from_axis_angle(_Z, np.pi)
POINT_DOWN = quat_from_axis_angle(_Y, np.pi / 2)

PLANAR_HOME = (-1.57, 1.2, 0.37)
UR_HOME = (0.0, -1.9, 2.6, -0.7, 0.0, 0.0)

BALL_RADIUS = 0.07
BALL_HOLD_DEPTH = 0.05


def _planar_arm(name: str, base_x: float, facing: bool) -> ArmModel:
    orientation = FACING if facing else np.array([1.0, 0.0, 0.0, 0.0])
    return ArmModel(
        name=name,
        base=Pose(np.array([base_x, 0.0, 0.0]), orientation),
        joint_axes=np.tile(_Y, (3, 1)),
        link_offsets=np.array([[0.35, 0.0, 0.0], [0.30, 0.0, 0.0], [0.10, 0.0, 0.0]]),
        link_radii=np.array([0.04, 0.035, 0.02]),
    )


def _ur_arm(name: str, base_x: float, facing: bool) -> ArmModel:
    orientation = FACING if facing else np.array([1.0, 0.0, 0.0, 0.0])
    return ArmModel(
        name=name,
        base=Pose(np.array([base_x, 0.0, 0.0]), orientation),
        joint_axes=np.array(
            [[0, 0, 1], [0, 1, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float
        ),
        link_offsets=np.array(
            [[0, 0, 0.16], [0.425, 0, 0], [0.39, 0, 0], [0.09, 0, 0], [0.09, 0, 0], [0.08, 0, 0]]
        ),
        link_radii=np.full(6, 0.04),
    )


def _ball(center) -> Ball:
    half_span = np.sqrt(BALL_RADIUS**2 - BALL_HOLD_DEPTH**2)
    return Ball(
        center=np.asarray(center, dtype=float),
        radius=BALL_RADIUS,
        contact_distance=2.0 * half_span,
        hold_depth=BALL_HOLD_DEPTH,
        contact_orientations=np.stack([np.array([1.0, 0.0, 0.0, 0.0]), FACING]),
    )


def _planar_objects() -> dict[str, Any]:
    return {
        "tray": Tray(
            pose=Pose(np.array([0.0, 0.0, 0.05]), np.array([1.0, 0.0, 0.0, 0.0])),
            half_extents=np.array([0.14, 0.10, 0.015]),
            grasp_points=np.array([[-0.14, 0.0, 0.0], [0.14, 0.0, 0.0]]),
            grasp_orientations=np.stack([np.array([1.0, 0.0, 0.0, 0.0]), FACING]),
            length=0.28,
        ),
        "ball": _ball([0.0, 0.0, 0.10]),
        "cube": Cube(
            pose=Pose(np.array([-0.25, 0.0, 0.10]), np.array([1.0, 0.0, 0.0, 0.0])),
            half_extents=np.array([0.03, 0.03, 0.03]),
            handles=np.array([[0.0, 0.0, 0.05], [0.10, 0.0, 0.05]]),
        ),
    }


def _ur_objects() -> dict[str, Any]:
    return {
        "tray": Tray(
            pose=Pose(np.array([0.0, 0.0, 0.25]), np.array([1.0, 0.0, 0.0, 0.0])),
            half_extents=np.array([0.15, 0.12, 0.015]),
            grasp_points=np.array([[-0.15, 0.0, 0.0], [0.15, 0.0, 0.0]]),
            grasp_orientations=np.stack([np.array([1.0, 0.0, 0.0, 0.0]), FACING]),
            length=0.30,
        ),
        "ball": _ball([0.0, 0.0, 0.30]),
        "cube": Cube(
            pose=Pose(np.array([-0.30, 0.0, 0.15]), np.array([1.0, 0.0, 0.0, 0.0])),
            half_extents=np.array([0.03, 0.03, 0.03]),
            handles=np.array([[0.0, 0.0, 0.05], [0.10, 0.0, 0.05]]),
        ),
    }


def _pick(objects: Mapping[str, Any], wanted: Iterable[str]) -> dict[str, Any]:
    chosen = {}
    for name in wanted:
        if name not in OBJECT_KINDS:
            raise WorldModelError(f"Unknown object kind '{name}' (expected one of {OBJECT_KINDS})")
        chosen[name] = objects[name]
    return chosen


def planar_scene(objects: Iterable[str] = ("tray",), *, with_obstacles: bool = True) -> SceneDescription:
    """Two 3-DOF arms pitching in the x-z plane, 1.1 m apart, facing each other."""
    spheres: tuple[SphereObstacle, ...] = ()
    boxes: tuple[BoxObstacle, ...] = ()
    if with_obstacles:
        spheres = (
            SphereObstacle("post_left", np.array([-0.30, 0.0, 0.80]), 0.05),
            SphereObstacle("post_right", np.array([0.30, 0.0, 0.80]), 0.05),
        )
        boxes = (BoxObstacle("shelf", np.array([0.0, 0.0, 0.95]), np.array([0.10, 0.10, 0.02])),)
    return SceneDescription(
        arms=(_planar_arm("left", -0.55, False), _planar_arm("right", 0.55, True)),
        home=np.array(PLANAR_HOME * 2),
        spheres=spheres,
        boxes=boxes,
        name="planar",
        **_pick(_planar_objects(), objects),
    )


def default_scene(objects: Iterable[str] = ("tray",), *, with_obstacles: bool = True) -> SceneDescription:
    """Two 6-DOF arms 1.2 m apart facing each other, 4 cm link capsules."""
    spheres: tuple[SphereObstacle, ...] = ()
    if with_obstacles:
        spheres = (SphereObstacle("lamp", np.array([0.0, 0.45, 1.0]), 0.08),)
    return SceneDescription(
        arms=(_ur_arm("left", -0.6, False), _ur_arm("right", 0.6, True)),
        home=np.array(UR_HOME * 2),
        spheres=spheres,
        name="ur_pair",
        **_pick(_ur_objects(), objects),
    )


BUILTIN_SCENES = {"planar": planar_scene, "ur_pair": default_scene}


def _vector(doc: Mapping[str, Any], key: str, size: int) -> np.ndarray:
    try:
        arr = np.asarray(doc[key], dtype=float)
    except KeyError as e:
        raise WorldModelError(f"Missing field '{key}'") from e
    except (TypeError, ValueError) as e:
        raise WorldModelError(f"Field '{key}' is not numeric") from e
    if arr.shape != (size,):
        raise WorldModelError(f"Field '{key}' must have {size} entries")
    return arr


def scene_from_dict(doc: Mapping[str, Any]) -> SceneDescription:
    """Scene from a config document::

        {"builtin": "planar", "objects": ["tray"], "with_obstacles": true,
         "spheres": [{"name": "s", "center": [x, y, z], "radius": r}],
         "boxes": [{"name": "b", "center": [...], "half_extents": [...]}],
         "object_positions": {"tray": [x, y, z]}, "tolerances": {"position": 0.015}}
    """
    name = doc.get("builtin", "planar")
    if name not in BUILTIN_SCENES:
        raise WorldModelError(f"Unknown builtin scene '{name}' (expected one of {sorted(BUILTIN_SCENES)})")
    base = BUILTIN_SCENES[name](tuple(doc.get("objects", ("tray",))), with_obstacles=bool(doc.get("with_obstacles", True)))

    try:
        spheres = base.spheres + tuple(
            SphereObstacle(str(s["name"]), _vector(s, "center", 3), float(s["radius"])) for s in doc.get("spheres", ())
        )
        boxes = base.boxes + tuple(
            BoxObstacle(str(b["name"]), _vector(b, "center", 3), _vector(b, "half_extents", 3))
            for b in doc.get("boxes", ())
        )
        tolerances = AttachTolerances(**dict(doc.get("tolerances", {})))
    except (KeyError, TypeError) as e:
        raise WorldModelError(f"Malformed scene document: {e}") from e

    objects: dict[str, Any] = {"tray": base.tray, "ball": base.ball, "cube": base.cube}
    for kind, position in dict(doc.get("object_positions", {})).items():
        current = objects.get(kind)
        if current is None:
            raise WorldModelError(f"Scene has no {kind} to move")
        p = _vector({"p": position}, "p", 3)
        try:
            if kind == "ball":
                objects[kind] = Ball(p, current.radius, current.contact_distance, current.hold_depth, current.contact_orientations)
            else:
                moved = Pose(p, current.pose.orientation)
                if kind == "tray":
                    objects[kind] = Tray(moved, current.half_extents, current.grasp_points, current.grasp_orientations, current.length)
                else:
                    objects[kind] = Cube(moved, current.half_extents, current.handles)
        except TrajectoryError as e:
            raise WorldModelError(str(e)) from e

    scene = SceneDescription(
        arms=base.arms,
        home=base.home,
        spheres=spheres,
        boxes=boxes,
        tolerances=tolerances,
        name=base.name,
        **objects,
    )
    logger.debug("Built scene %s with %d collision pairs", scene.name, len(scene.collision_pairs()))
    return scene
