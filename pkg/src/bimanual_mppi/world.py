"""World models: the rollout contract and the kinematic dual-arm surrogate.

The surrogate replaces contact physics with latching rules. Objects are free
or held; a held object follows its holder rigidly and is left where it was the
moment the release condition triggers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Literal, Optional, Protocol

import numpy as np

from .geometry import capsule_box_distance, capsule_sphere_distance, segment_segment_distance
from .trajectory import (
    Pose,
    TrajectoryError,
    _geodesic,
    as_joint_vector,
    integrate_velocities,
    quat_conjugate,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_multiply,
    quat_normalize,
    quat_rotate,
)

logger = logging.getLogger(__name__)

JointKind = Literal["revolute", "prismatic"]

_IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])
_UP = np.array([0.0, 0.0, 1.0])


class WorldModelError(ValueError):
    pass


def _frozen(values, shape: Optional[tuple] = None) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if shape is not None and arr.shape != shape:
        raise WorldModelError(f"Expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


# -- scene description ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Serial chain: joint j acts about ``joint_axes[j]`` (its local frame), then
    ``link_offsets[j]`` leads to the next joint. The last link ends at the tool point."""

    name: str
    base: Pose
    joint_axes: np.ndarray
    link_offsets: np.ndarray
    link_radii: np.ndarray
    joint_kinds: tuple[JointKind, ...] = ()
    tool_orientation: np.ndarray = field(default_factory=lambda: _IDENTITY_Q.copy())

    def __post_init__(self) -> None:
        axes = np.asarray(self.joint_axes, dtype=float)
        if axes.ndim != 2 or axes.shape[1] != 3 or axes.shape[0] == 0:
            raise WorldModelError(f"{self.name}: joint axes must be J x 3")
        norms = np.linalg.norm(axes, axis=1)
        if np.any(norms < 1e-12):
            raise WorldModelError(f"{self.name}: zero joint axis")
        J = axes.shape[0]
        object.__setattr__(self, "joint_axes", _frozen(axes / norms[:, None]))
        object.__setattr__(self, "link_offsets", _frozen(self.link_offsets, (J, 3)))
        radii = _frozen(self.link_radii, (J,))
        if np.any(radii <= 0):
            raise WorldModelError(f"{self.name}: link radii must be positive")
        object.__setattr__(self, "link_radii", radii)
        kinds = tuple(self.joint_kinds) or ("revolute",) * J
        if len(kinds) != J or any(k not in ("revolute", "prismatic") for k in kinds):
            raise WorldModelError(f"{self.name}: joint kinds must be {J} of revolute|prismatic")
        object.__setattr__(self, "joint_kinds", kinds)
        object.__setattr__(self, "tool_orientation", _frozen(quat_normalize(self.tool_orientation), (4,)))

    @property
    def dof(self) -> int:
        return int(self.joint_axes.shape[0])


@dataclass(frozen=True, eq=False)
class SphereObstacle:
    name: str
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _frozen(self.center, (3,)))
        if not (self.radius > 0):
            raise WorldModelError(f"Obstacle {self.name}: radius must be positive")


@dataclass(frozen=True, eq=False)
class BoxObstacle:
    name: str
    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _frozen(self.center, (3,)))
        half = _frozen(self.half_extents, (3,))
        if np.any(half <= 0):
            raise WorldModelError(f"Obstacle {self.name}: half extents must be positive")
        object.__setattr__(self, "half_extents", half)


@dataclass(frozen=True, eq=False)
class Tray:
    pose: Pose
    half_extents: np.ndarray
    grasp_points: np.ndarray
    grasp_orientations: np.ndarray
    length: float

    def __post_init__(self) -> None:
        half = _frozen(self.half_extents, (3,))
        points = _frozen(self.grasp_points, (2, 3))
        if np.any(half <= 0) or not (self.length > 0):
            raise WorldModelError("Tray extents and length must be positive")
        if np.any(np.abs(points) > half + 1e-9):
            raise WorldModelError("Tray grasp points must lie on the tray body")
        object.__setattr__(self, "half_extents", half)
        object.__setattr__(self, "grasp_points", points)
        object.__setattr__(self, "grasp_orientations", _frozen(quat_normalize(self.grasp_orientations), (2, 4)))

    def grasp_poses(self, position=None, orientation=None) -> tuple[np.ndarray, np.ndarray]:
        """World grasp positions (..., 2, 3) and orientations (..., 2, 4) for a tray pose."""
        p = self.pose.position if position is None else np.asarray(position, dtype=float)
        q = self.pose.orientation if orientation is None else np.asarray(orientation, dtype=float)
        gp = p[..., None, :] + quat_rotate(q[..., None, :], self.grasp_points)
        gq = quat_multiply(q[..., None, :], self.grasp_orientations)
        return gp, gq


@dataclass(frozen=True, eq=False)
class Ball:
    """``contact_distance`` is l_ball; contacts sit ``hold_depth`` below the centre."""

    center: np.ndarray
    radius: float
    contact_distance: float
    hold_depth: float
    contact_orientations: np.ndarray = field(default_factory=lambda: np.tile(_IDENTITY_Q, (2, 1)))

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _frozen(self.center, (3,)))
        if not (self.radius > 0 and self.contact_distance > 0 and self.hold_depth > 0):
            raise WorldModelError("Ball radius, contact distance and hold depth must be positive")
        object.__setattr__(
            self, "contact_orientations", _frozen(quat_normalize(self.contact_orientations), (2, 4))
        )


@dataclass(frozen=True, eq=False)
class Cube:
    pose: Pose
    half_extents: np.ndarray
    handles: np.ndarray

    def __post_init__(self) -> None:
        half = _frozen(self.half_extents, (3,))
        if np.any(half <= 0):
            raise WorldModelError("Cube extents must be positive")
        object.__setattr__(self, "half_extents", half)
        object.__setattr__(self, "handles", _frozen(self.handles, (2, 3)))

    def handle_positions(self, position=None, orientation=None) -> np.ndarray:
        p = self.pose.position if position is None else np.asarray(position, dtype=float)
        q = self.pose.orientation if orientation is None else np.asarray(orientation, dtype=float)
        return p[..., None, :] + quat_rotate(q[..., None, :], self.handles)


@dataclass(frozen=True)
class AttachTolerances:
    position: float = 0.015
    orientation: float = 0.15
    ball_separation: float = 0.01
    ball_center: float = 0.02
    release_factor: float = 2.0


@dataclass(frozen=True)
class CollisionPair:
    label: str
    kind: str
    tags: frozenset


@dataclass(frozen=True, eq=False)
class SceneDescription:
    arms: tuple[ArmModel, ArmModel]
    home: np.ndarray
    spheres: tuple[SphereObstacle, ...] = ()
    boxes: tuple[BoxObstacle, ...] = ()
    tray: Optional[Tray] = None
    ball: Optional[Ball] = None
    cube: Optional[Cube] = None
    tolerances: AttachTolerances = AttachTolerances()
    name: str = "scene"

    def __post_init__(self) -> None:
        if len(self.arms) != 2:
            raise WorldModelError("A scene has exactly two arms")
        object.__setattr__(self, "arms", tuple(self.arms))
        object.__setattr__(self, "spheres", tuple(self.spheres))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "home", _frozen(self.home, (self.dof,)))
        names = [o.name for o in self.spheres + self.boxes]
        if len(set(names)) != len(names):
            raise WorldModelError("Obstacle names must be unique")

    @property
    def dof(self) -> int:
        return self.arms[0].dof + self.arms[1].dof

    def arm_joints(self, joints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        split = self.arms[0].dof
        return joints[..., :split], joints[..., split:]

    def _layout(self) -> list[tuple[str, CollisionPair]]:
        a1, a2 = self.arms
        links = [(a1.name, j) for j in range(a1.dof)] + [(a2.name, j) for j in range(a2.dof)]
        body = [(a1.name, j) for j in range(a1.dof - 1)] + [(a2.name, j) for j in range(a2.dof - 1)]
        layout: list[tuple[str, CollisionPair]] = []
        for i in range(a1.dof):
            for j in range(a2.dof):
                label = f"{a1.name}.link{i}|{a2.name}.link{j}"
                layout.append(("arms", CollisionPair(label, "capsule-capsule", frozenset({"arms"}))))
        for s in self.spheres:
            for arm, j in links:
                pair = CollisionPair(f"{arm}.link{j}|{s.name}", "capsule-sphere", frozenset({"obstacle", s.name}))
                layout.append(("spheres", pair))
        for b in self.boxes:
            for arm, j in links:
                pair = CollisionPair(f"{arm}.link{j}|{b.name}", "capsule-box", frozenset({"obstacle", b.name}))
                layout.append(("boxes", pair))
        for obj, kind, present in (
            ("tray", "capsule-box", self.tray is not None),
            ("ball", "capsule-sphere", self.ball is not None),
            ("cube", "capsule-box", self.cube is not None),
        ):
            if present:
                for arm, j in body:
                    layout.append((obj, CollisionPair(f"{arm}.link{j}|{obj}", kind, frozenset({"object", obj}))))
        return layout

    def collision_pairs(self, mask: frozenset = frozenset()) -> tuple[CollisionPair, ...]:
        """Registered pairs minus those carrying a masked tag. Grippers are not paired with objects."""
        return tuple(p for _, p in self._layout() if not (p.tags & mask))


# -- states -----------------------------------------------------------------


@dataclass(frozen=True)
class GraspState:
    tray: bool = False
    ball: bool = False
    cube_holder: int = 0


@dataclass(frozen=True, eq=False)
class WorldState:
    joints: np.ndarray
    ee_poses: tuple[Pose, Pose]
    ee_velocities: np.ndarray
    grasp: GraspState = GraspState()
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mask: frozenset = frozenset()
    tray: Optional[Pose] = None
    ball: Optional[np.ndarray] = None
    cube: Optional[Pose] = None
    tray_offset: Optional[Pose] = None
    ball_offset: Optional[np.ndarray] = None
    cube_offset: Optional[Pose] = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "joints", _frozen(as_joint_vector(self.joints)))
        except TrajectoryError as e:
            raise WorldModelError(str(e)) from e
        object.__setattr__(self, "ee_velocities", _frozen(self.ee_velocities, (2, 3)))
        object.__setattr__(self, "distances", _frozen(self.distances))
        object.__setattr__(self, "mask", frozenset(self.mask))
        if self.ball is not None:
            object.__setattr__(self, "ball", _frozen(self.ball, (3,)))
        if self.ball_offset is not None:
            object.__setattr__(self, "ball_offset", _frozen(self.ball_offset, (3,)))

    @property
    def ee_positions(self) -> np.ndarray:
        return np.stack([p.position for p in self.ee_poses])

    @property
    def ee_orientations(self) -> np.ndarray:
        return np.stack([p.orientation for p in self.ee_poses])


@dataclass(frozen=True, eq=False)
class ObjectTrack:
    """Per-step object arrays of shape (n, K, ...). ``holder`` is 0 when free; the tray
    and ball use 1 for held, the cube stores the holding arm (1 or 2)."""

    positions: np.ndarray
    orientations: np.ndarray
    holder: np.ndarray
    offset_positions: np.ndarray
    offset_orientations: np.ndarray


@dataclass(frozen=True, eq=False)
class BatchRollout:
    joints: np.ndarray
    ee_positions: np.ndarray
    ee_orientations: np.ndarray
    ee_velocities: np.ndarray
    distances: np.ndarray
    pairs: tuple[CollisionPair, ...]
    mask: frozenset
    dt: float
    tray: Optional[ObjectTrack] = None
    ball: Optional[ObjectTrack] = None
    cube: Optional[ObjectTrack] = None

    @property
    def size(self) -> int:
        return int(self.joints.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.joints.shape[1]) - 1

    def columns(self, mask: frozenset) -> np.ndarray:
        """Indices of distance columns that survive an additional mask."""
        return np.array([i for i, p in enumerate(self.pairs) if not (p.tags & mask)], dtype=int)

    def state(self, i: int, k: int) -> WorldState:
        def pose(track: Optional[ObjectTrack]) -> Optional[Pose]:
            if track is None:
                return None
            return Pose.from_arrays(track.positions[i, k], track.orientations[i, k])

        def offset(track: Optional[ObjectTrack]) -> Optional[Pose]:
            if track is None or track.holder[i, k] == 0:
                return None
            return Pose.from_arrays(track.offset_positions[i, k], track.offset_orientations[i, k])

        ball_held = self.ball is not None and self.ball.holder[i, k] > 0
        return WorldState(
            joints=self.joints[i, k],
            ee_poses=(
                Pose.from_arrays(self.ee_positions[i, k, 0], self.ee_orientations[i, k, 0]),
                Pose.from_arrays(self.ee_positions[i, k, 1], self.ee_orientations[i, k, 1]),
            ),
            ee_velocities=self.ee_velocities[i, k],
            grasp=GraspState(
                tray=self.tray is not None and bool(self.tray.holder[i, k] > 0),
                ball=bool(ball_held),
                cube_holder=0 if self.cube is None else int(self.cube.holder[i, k]),
            ),
            distances=self.distances[i, k],
            mask=self.mask,
            tray=pose(self.tray),
            ball=None if self.ball is None else self.ball.positions[i, k],
            cube=pose(self.cube),
            tray_offset=offset(self.tray),
            ball_offset=self.ball.offset_positions[i, k] if ball_held else None,
            cube_offset=offset(self.cube),
        )

    def result(self, i: int = 0) -> "RolloutResult":
        return RolloutResult(tuple(self.state(i, k) for k in range(self.horizon + 1)), self.dt, self.pairs)


@dataclass(frozen=True, eq=False)
class RolloutResult:
    states: tuple[WorldState, ...]
    dt: float
    pairs: tuple[CollisionPair, ...] = ()

    def __len__(self) -> int:
        return len(self.states)

    @property
    def joints(self) -> np.ndarray:
        return np.stack([s.joints for s in self.states])

    def batch(self) -> BatchRollout:
        """Single-rollout view in batch layout (n = 1)."""
        states = self.states

        def track(attr: str, offset_attr: str, holder_of) -> Optional[ObjectTrack]:
            if getattr(states[0], attr) is None:
                return None
            pos, quat, off_p, off_q = [], [], [], []
            for s in states:
                obj = getattr(s, attr)
                off = getattr(s, offset_attr)
                if isinstance(obj, Pose):
                    pos.append(obj.position)
                    quat.append(obj.orientation)
                else:
                    pos.append(obj)
                    quat.append(_IDENTITY_Q)
                if off is None:
                    off_p.append(np.zeros(3))
                    off_q.append(_IDENTITY_Q)
                elif isinstance(off, Pose):
                    off_p.append(off.position)
                    off_q.append(off.orientation)
                else:
                    off_p.append(off)
                    off_q.append(_IDENTITY_Q)
            return ObjectTrack(
                np.stack(pos)[None],
                np.stack(quat)[None],
                np.array([holder_of(s) for s in states])[None],
                np.stack(off_p)[None],
                np.stack(off_q)[None],
            )

        return BatchRollout(
            joints=self.joints[None],
            ee_positions=np.stack([s.ee_positions for s in states])[None],
            ee_orientations=np.stack([s.ee_orientations for s in states])[None],
            ee_velocities=np.stack([s.ee_velocities for s in states])[None],
            distances=np.stack([s.distances for s in states])[None],
            pairs=self.pairs,
            mask=states[0].mask,
            dt=self.dt,
            tray=track("tray", "tray_offset", lambda s: int(s.grasp.tray)),
            ball=track("ball", "ball_offset", lambda s: int(s.grasp.ball)),
            cube=track("cube", "cube_offset", lambda s: s.grasp.cube_holder),
        )


# -- kinematics -------------------------------------------------------------


def arm_kinematics(arm: ArmModel, joints) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Tool position, tool orientation (w >= 0) and link segment endpoints for ``joints`` (..., J)."""
    joints = np.asarray(joints, dtype=float)
    lead = joints.shape[:-1]
    pos = np.broadcast_to(arm.base.position, lead + (3,))
    quat = np.broadcast_to(arm.base.orientation, lead + (4,))
    starts, ends = [], []
    for j in range(arm.dof):
        angle = joints[..., j]
        local = np.broadcast_to(arm.link_offsets[j], lead + (3,))
        if arm.joint_kinds[j] == "revolute":
            quat = quat_multiply(quat, quat_from_axis_angle(arm.joint_axes[j], angle))
        else:
            local = local + angle[..., None] * arm.joint_axes[j]
        starts.append(pos)
        pos = pos + quat_rotate(quat, local)
        ends.append(pos)
    tool = quat_normalize(quat_multiply(quat, arm.tool_orientation))
    tool = np.where(tool[..., :1] < 0, -tool, tool)
    return pos, tool, np.stack(starts, axis=-2), np.stack(ends, axis=-2)


def forward_kinematics(scene: SceneDescription, joints) -> tuple[Pose, Pose]:
    joints = np.asarray(joints, dtype=float)
    if joints.shape != (scene.dof,):
        raise WorldModelError(f"Scene has {scene.dof} joints, got shape {joints.shape}")
    poses = []
    for arm, q in zip(scene.arms, scene.arm_joints(joints)):
        p, o, _, _ = arm_kinematics(arm, q)
        poses.append(Pose.from_arrays(p, o))
    return poses[0], poses[1]


def midpoint_frame(p1, p2) -> tuple[np.ndarray, np.ndarray]:
    """Frame at the end-effector midpoint: x along p2 - p1, y horizontal, z completing."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    x = p2 - p1
    nx = np.linalg.norm(x, axis=-1, keepdims=True)
    x = np.where(nx > 1e-12, x / np.where(nx > 1e-12, nx, 1.0), np.array([1.0, 0.0, 0.0]))
    y = np.cross(_UP, x)
    ny = np.linalg.norm(y, axis=-1, keepdims=True)
    fallback = np.array([0.0, 1.0, 0.0]) - x[..., 1:2] * x
    fallback = fallback / np.linalg.norm(fallback, axis=-1, keepdims=True)
    y = np.where(ny > 1e-9, y / np.where(ny > 1e-9, ny, 1.0), fallback)
    z = np.cross(x, y)
    return 0.5 * (p1 + p2), quat_from_matrix(np.stack([x, y, z], axis=-1))


def _compose(pa, qa, pb, qb) -> tuple[np.ndarray, np.ndarray]:
    return pa + quat_rotate(qa, pb), quat_normalize(quat_multiply(qa, qb))


def _relative(pa, qa, pb, qb) -> tuple[np.ndarray, np.ndarray]:
    inv = quat_conjugate(qa)
    return quat_rotate(inv, pb - pa), quat_normalize(quat_multiply(inv, qb))


def _where(cond, a, b) -> np.ndarray:
    return np.where(np.reshape(cond, np.shape(cond) + (1,) * (np.ndim(a) - np.ndim(cond))), a, b)


# -- attachment rules (vectorized over a leading batch axis) --------------------


def _update_tray(tray: Tray, tol: AttachTolerances, p, q, prev):
    pos, quat, holder, off_p, off_q = prev
    fp, fq = midpoint_frame(p[..., 0, :], p[..., 1, :])
    cand_p, cand_q = _compose(fp, fq, off_p, off_q)
    f = tol.release_factor

    def within(tp, tq, scale):
        gp, gq = tray.grasp_poses(tp, tq)
        dp = np.linalg.norm(p - gp, axis=-1)
        dq = _geodesic(q, gq)
        return np.all(dp <= scale * tol.position, axis=-1) & np.all(dq <= scale * tol.orientation, axis=-1)

    keep = (holder > 0) & within(cand_p, cand_q, f)
    pos = _where(keep, cand_p, pos)
    quat = _where(keep, cand_q, quat)
    attach = ~keep & within(pos, quat, 1.0)
    rel_p, rel_q = _relative(fp, fq, pos, quat)
    off_p = _where(attach, rel_p, off_p)
    off_q = _where(attach, rel_q, off_q)
    return pos, quat, (keep | attach).astype(int), off_p, off_q


def _update_ball(ball: Ball, tol: AttachTolerances, p, q, prev):
    pos, quat, holder, off_p, off_q = prev
    mid = 0.5 * (p[..., 0, :] + p[..., 1, :])
    sep_err = np.abs(np.linalg.norm(p[..., 0, :] - p[..., 1, :], axis=-1) - ball.contact_distance)
    depth = np.array([0.0, 0.0, ball.hold_depth])
    f = tol.release_factor

    cand = mid + off_p
    keep = (
        (holder > 0)
        & (sep_err <= f * tol.ball_separation)
        & (np.linalg.norm(mid - (cand - depth), axis=-1) <= f * tol.ball_center)
    )
    pos = _where(keep, cand, pos)
    attach = ~keep & (sep_err <= tol.ball_separation) & (np.linalg.norm(mid - (pos - depth), axis=-1) <= tol.ball_center)
    off_p = _where(attach, pos - mid, off_p)
    return pos, quat, (keep | attach).astype(int), off_p, off_q


def _update_cube(cube: Cube, tol: AttachTolerances, p, q, prev):
    pos, quat, holder, off_p, off_q = prev
    by_two = holder == 2
    ee_p = _where(by_two, p[..., 1, :], p[..., 0, :])
    ee_q = _where(by_two, q[..., 1, :], q[..., 0, :])
    cand_p, cand_q = _compose(ee_p, ee_q, off_p, off_q)
    held = holder > 0
    pos = _where(held, cand_p, pos)
    quat = _where(held, cand_q, quat)

    handles = cube.handle_positions(pos, quat)
    reach = np.linalg.norm(p - handles, axis=-1) <= tol.position
    to_two = (holder == 1) & reach[..., 1]
    to_one = (holder == 0) & reach[..., 0]
    new_holder = np.where(to_two, 2, np.where(to_one, 1, holder))

    rel1 = _relative(p[..., 0, :], q[..., 0, :], pos, quat)
    rel2 = _relative(p[..., 1, :], q[..., 1, :], pos, quat)
    off_p = _where(to_one, rel1[0], _where(to_two, rel2[0], off_p))
    off_q = _where(to_one, rel1[1], _where(to_two, rel2[1], off_q))
    return pos, quat, new_holder, off_p, off_q


# -- world models -----------------------------------------------------------


class WorldModel(Protocol):
    """Anything the planner can roll sampled sequences through."""

    def joints_of(self, state: Any) -> np.ndarray: ...

    def rollout_batch(self, state0: Any, seqs: np.ndarray, dt: float, mask: frozenset = frozenset()) -> Any: ...


class KinematicSurrogate:
    def __init__(self, scene: SceneDescription):
        self.scene = scene
        self._layout = scene._layout()
        arms = scene.arms
        self._radii = np.concatenate([a.link_radii for a in arms])
        self._body = np.concatenate(
            [np.arange(arms[0].dof - 1), arms[0].dof + np.arange(arms[1].dof - 1)]
        ).astype(int)

    def joints_of(self, state: WorldState) -> np.ndarray:
        return np.asarray(state.joints)

    # kinematics for (..., D) joints
    def _kinematics(self, joints: np.ndarray):
        j1, j2 = self.scene.arm_joints(joints)
        p1, q1, s1, e1 = arm_kinematics(self.scene.arms[0], j1)
        p2, q2, s2, e2 = arm_kinematics(self.scene.arms[1], j2)
        ee_p = np.stack([p1, p2], axis=-2)
        ee_q = np.stack([q1, q2], axis=-2)
        return ee_p, ee_q, np.concatenate([s1, s2], axis=-2), np.concatenate([e1, e2], axis=-2)

    def _distances(self, starts, ends, tracks: dict, mask: frozenset) -> tuple[np.ndarray, tuple]:
        selected = [(g, p) for g, p in self._layout if not (p.tags & mask)]
        groups = {g for g, _ in selected}
        columns: dict[str, np.ndarray] = {}
        scene = self.scene
        J1 = scene.arms[0].dof
        r = self._radii

        if "arms" in groups:
            a1, b1 = starts[..., :J1, None, :], ends[..., :J1, None, :]
            a2, b2 = starts[..., None, J1:, :], ends[..., None, J1:, :]
            d = segment_segment_distance(a1, b1, a2, b2) - r[:J1, None] - r[None, J1:]
            columns["arms"] = d.reshape(d.shape[:-2] + (-1,))
        if "spheres" in groups:
            centers = np.stack([s.center for s in scene.spheres])
            radii = np.array([s.radius for s in scene.spheres])
            d = capsule_sphere_distance(
                starts[..., None, :, :], ends[..., None, :, :], r, centers[:, None, :], radii[:, None]
            )
            columns["spheres"] = d.reshape(d.shape[:-2] + (-1,))
        if "boxes" in groups:
            centers = np.stack([b.center for b in scene.boxes])
            halves = np.stack([b.half_extents for b in scene.boxes])
            d = capsule_box_distance(
                starts[..., None, :, :], ends[..., None, :, :], r, centers[:, None, :], halves[:, None, :]
            )
            columns["boxes"] = d.reshape(d.shape[:-2] + (-1,))

        body_a, body_b, body_r = starts[..., self._body, :], ends[..., self._body, :], r[self._body]
        if "tray" in groups:
            t = tracks["tray"]
            columns["tray"] = capsule_box_distance(
                body_a,
                body_b,
                body_r,
                t[0][..., None, :],
                scene.tray.half_extents,
                t[1][..., None, :],
            )
        if "ball" in groups:
            b = tracks["ball"]
            columns["ball"] = capsule_sphere_distance(body_a, body_b, body_r, b[0][..., None, :], scene.ball.radius)
        if "cube" in groups:
            c = tracks["cube"]
            columns["cube"] = capsule_box_distance(
                body_a,
                body_b,
                body_r,
                c[0][..., None, :],
                scene.cube.half_extents,
                c[1][..., None, :],
            )

        # columns within each group follow the layout order; pick the unmasked ones
        picked = []
        position = {g: 0 for g in columns}
        for g, p in self._layout:
            if g not in columns:
                continue
            idx = position[g]
            position[g] += 1
            if not (p.tags & mask):
                picked.append(columns[g][..., idx])
        lead = starts.shape[:-2]
        dist = np.stack(picked, axis=-1) if picked else np.zeros(lead + (0,))
        return dist, tuple(p for _, p in selected)

    def _object_specs(self):
        scene = self.scene
        return (
            ("tray", scene.tray, _update_tray),
            ("ball", scene.ball, _update_ball),
            ("cube", scene.cube, _update_cube),
        )

    def _state_track(self, name: str, state: WorldState) -> tuple:
        obj = getattr(state, name)
        offset = getattr(state, f"{name}_offset")
        if name == "ball":
            pos, quat = np.asarray(obj), _IDENTITY_Q
            holder = int(state.grasp.ball)
            off_p = np.zeros(3) if offset is None else np.asarray(offset)
            off_q = _IDENTITY_Q
        else:
            pos, quat = obj.position, obj.orientation
            holder = int(state.grasp.tray) if name == "tray" else state.grasp.cube_holder
            off_p = np.zeros(3) if offset is None else offset.position
            off_q = _IDENTITY_Q if offset is None else offset.orientation
        return np.asarray(pos, dtype=float), np.asarray(quat, dtype=float), holder, off_p, off_q

    def initial_state(self, joints=None, mask: frozenset = frozenset()) -> WorldState:
        """State at ``joints`` (default: home) with objects at their scene poses, latches evaluated."""
        scene = self.scene
        joints = scene.home if joints is None else np.asarray(joints, dtype=float)
        ee1, ee2 = forward_kinematics(scene, joints)
        state = WorldState(
            joints=joints,
            ee_poses=(ee1, ee2),
            ee_velocities=np.zeros((2, 3)),
            mask=mask,
            tray=None if scene.tray is None else scene.tray.pose,
            ball=None if scene.ball is None else scene.ball.center,
            cube=None if scene.cube is None else scene.cube.pose,
        )
        return self.rollout_batch(state, np.zeros((1, 0, scene.dof)), 1.0, mask).state(0, 0)

    def rollout_batch(self, state0: WorldState, seqs, dt: float, mask: frozenset = frozenset()) -> BatchRollout:
        """Roll ``n x H x D`` sequences from ``state0``. Step 0 reuses the state's poses and
        re-evaluates the latches; distances are recomputed under ``mask``."""
        scene = self.scene
        seqs = np.asarray(seqs, dtype=float)
        if seqs.ndim == 2:
            seqs = seqs[None]
        if seqs.ndim != 3 or seqs.shape[-1] != scene.dof:
            raise WorldModelError(f"Expected (n, H, {scene.dof}) sequences, got {seqs.shape}")
        if not (dt > 0):
            raise WorldModelError(f"dt must be positive, got {dt}")
        mask = frozenset(mask)
        n, H, _ = seqs.shape
        K = H + 1

        joints = integrate_velocities(state0.joints, seqs, dt) if H else np.broadcast_to(
            state0.joints, (n, 1, scene.dof)
        ).copy()
        ee_p, ee_q, starts, ends = self._kinematics(joints)
        ee_p = np.array(ee_p)
        ee_q = np.array(ee_q)
        ee_p[:, 0] = state0.ee_positions
        ee_q[:, 0] = state0.ee_orientations
        ee_v = np.empty_like(ee_p)
        ee_v[:, 0] = state0.ee_velocities
        if H:
            ee_v[:, 1:] = np.diff(ee_p, axis=1) / dt

        tracks: dict[str, ObjectTrack] = {}
        for name, spec, step in self._object_specs():
            if spec is None:
                continue
            if getattr(state0, name) is None:
                raise WorldModelError(f"State has no {name} pose but the scene defines one")
            pos0, quat0, holder0, off_p0, off_q0 = self._state_track(name, state0)
            pos = np.empty((n, K, 3))
            quat = np.empty((n, K, 4))
            holder = np.empty((n, K), dtype=int)
            off_p = np.empty((n, K, 3))
            off_q = np.empty((n, K, 4))
            current = (
                np.broadcast_to(pos0, (n, 3)).copy(),
                np.broadcast_to(quat0, (n, 4)).copy(),
                np.full(n, holder0, dtype=int),
                np.broadcast_to(off_p0, (n, 3)).copy(),
                np.broadcast_to(off_q0, (n, 4)).copy(),
            )
            # step 0: the object already sits where state0 says; only the latches are re-evaluated
            for k in range(K):
                if k == 0:
                    current = self._relatch(step, spec, ee_p[:, 0], ee_q[:, 0], current)
                else:
                    current = step(spec, scene.tolerances, ee_p[:, k], ee_q[:, k], current)
                pos[:, k], quat[:, k], holder[:, k], off_p[:, k], off_q[:, k] = current
            tracks[name] = ObjectTrack(pos, quat, holder, off_p, off_q)

        dist, pairs = self._distances(
            starts, ends, {k: (t.positions, t.orientations) for k, t in tracks.items()}, mask
        )
        return BatchRollout(
            joints=joints,
            ee_positions=ee_p,
            ee_orientations=ee_q,
            ee_velocities=ee_v,
            distances=dist,
            pairs=pairs,
            mask=mask,
            dt=float(dt),
            tray=tracks.get("tray"),
            ball=tracks.get("ball"),
            cube=tracks.get("cube"),
        )

    def _relatch(self, step, spec, p, q, current):
        """Apply the rules without moving held objects (their pose already follows the holder)."""
        pos, quat, holder, off_p, off_q = current
        new = step(spec, self.scene.tolerances, p, q, current)
        held_before = holder > 0
        still = held_before & (new[2] > 0)
        return (
            _where(still, pos, new[0]),
            _where(still, quat, new[1]),
            new[2],
            new[3],
            new[4],
        )

    def rollout(self, state0: WorldState, seq, dt: float, mask: frozenset = frozenset()) -> RolloutResult:
        values = seq.values if hasattr(seq, "values") else np.asarray(seq, dtype=float)
        return self.rollout_batch(state0, values[None], dt, mask).result(0)

    def step(self, state: WorldState, velocity, dt: float, mask: frozenset = frozenset()) -> WorldState:
        v = np.asarray(velocity, dtype=float).reshape(1, 1, -1)
        return self.rollout_batch(state, v, dt, mask).state(0, 1)

    def signed_distances(self, state: WorldState, mask: Optional[frozenset] = None) -> np.ndarray:
        mask = state.mask if mask is None else frozenset(mask)
        return self.rollout_batch(state, np.zeros((1, 0, self.scene.dof)), 1.0, mask).distances[0, 0]

    def attach(self, state: WorldState) -> GraspState:
        return self.rollout_batch(state, np.zeros((1, 0, self.scene.dof)), 1.0, state.mask).state(0, 0).grasp


def signed_distances(scene: SceneDescription, state: WorldState, mask: Optional[frozenset] = None) -> np.ndarray:
    """One entry per unmasked collision pair, in ``scene.collision_pairs(mask)`` order."""
    return KinematicSurrogate(scene).signed_distances(state, mask)


def rollout(scene: SceneDescription, state0: WorldState, seq, dt: float, mask: frozenset = frozenset()) -> RolloutResult:
    return KinematicSurrogate(scene).rollout(state0, seq, dt, mask)


def attach_rules(scene: SceneDescription, state: WorldState) -> GraspState:
    """Re-evaluate grasp latches on a state: held objects stay held until the release
    distance (``release_factor`` times the attach tolerance) is exceeded."""
    return KinematicSurrogate(scene).attach(state)


@dataclass(frozen=True, eq=False)
class JointState:
    joints: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "joints", _frozen(as_joint_vector(self.joints)))


@dataclass(frozen=True, eq=False)
class JointRollout:
    joints: np.ndarray
    dt: float


class JointIntegrator:
    """Joints-only single integrator; the world of the analytic convergence check."""

    def __init__(self, dof: int):
        self.dof = dof

    def joints_of(self, state: JointState) -> np.ndarray:
        return np.asarray(state.joints)

    def rollout_batch(self, state0: JointState, seqs, dt: float, mask: frozenset = frozenset()) -> JointRollout:
        seqs = np.asarray(seqs, dtype=float)
        if seqs.ndim != 3 or seqs.shape[-1] != self.dof:
            raise WorldModelError(f"Expected (n, H, {self.dof}) sequences, got {seqs.shape}")
        return JointRollout(integrate_velocities(state0.joints, seqs, dt), float(dt))

    def step(self, state: JointState, velocity, dt: float, mask: frozenset = frozenset()) -> JointState:
        return JointState(np.asarray(state.joints) + dt * np.asarray(velocity, dtype=float))
