"""Task specifications, phase gating and total costs for the three manipulation tasks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Optional, Union

import numpy as np

from .costs import (
    CostError,
    axis_alignment_cost,
    collision_cost,
    ee_distance_cost,
    eef_obj_alignment_cost,
    joint_deviation_cost,
    obj_target_cost,
    orientation_target_cost,
    paired_orientation_cost,
    paired_position_cost,
    position_target_cost,
    relative_velocity_cost,
)
from .scenes import FACING, POINT_DOWN
from .trajectory import DerivativeBounds, _geodesic
from .world import BatchRollout, RolloutResult, SceneDescription, WorldState

logger = logging.getLogger(__name__)

TaskKind = Literal["tray", "ball", "handover"]

PHASES: dict[str, tuple[str, ...]] = {
    "tray": ("pick", "move"),
    "ball": ("pick", "move"),
    "handover": ("pick", "pass", "place"),
}

_UP = np.array([0.0, 0.0, 1.0])


class TaskError(ValueError):
    pass


def default_bounds(dof: int) -> DerivativeBounds:
    return DerivativeBounds.symmetric(dof, position=np.pi, velocity=1.0, acceleration=4.0, jerk=40.0)


@dataclass(frozen=True)
class CostWeights:
    """Term weights. ``w_pick``/``w_move``/``w_pass`` are phase gates; ``handover_arm_weights``
    holds per-arm weights for the pick, pass and place phases."""

    w_c: float = 10.0
    w_theta: float = 0.02
    w_z: float = 1.0
    w_v: float = 0.5
    w_pick: float = 1.0
    w_move: float = 0.0
    w_p_pick: float = 1.0
    w_r_pick: float = 0.3
    w_l: float = 50.0
    w_p_tray: float = 1.0
    w_r_tray: float = 0.5
    w_r_move: float = 0.3
    w_yz: float = 1.0
    w_r: float = 0.3
    w_eef_obj: float = 1.0
    w_obj_targ: float = 1.0
    w_p: float = 1.0
    w_pass: float = 0.0
    handover_arm_weights: tuple[tuple[float, float], ...] = ((1.0, 0.0), (1.0, 1.0), (0.0, 1.0))

    def __post_init__(self) -> None:
        arm = np.asarray(self.handover_arm_weights, dtype=float)
        if arm.shape != (3, 2):
            raise TaskError("handover_arm_weights needs one (arm 1, arm 2) pair per phase")
        object.__setattr__(self, "handover_arm_weights", tuple(tuple(float(w) for w in row) for row in arm))
        values = [getattr(self, name) for name in self.__dataclass_fields__ if name != "handover_arm_weights"]
        if any(not np.isfinite(v) or v < 0 for v in values) or np.any(arm < 0):
            raise TaskError("Cost weights must be finite and non-negative")
        for gate in ("w_pick", "w_move", "w_pass"):
            if getattr(self, gate) not in (0.0, 1.0):
                raise TaskError(f"Phase gate {gate} must be 0 or 1")
        if self.w_pick and self.w_move:
            raise TaskError("w_pick and w_move are mutually exclusive")

    def gated(self, task: str, phase: str) -> "CostWeights":
        """Copy with the gates of ``phase`` switched on and all others off."""
        if task == "handover":
            return replace(self, w_pick=0.0, w_move=0.0, w_pass=float(phase == "pass"))
        return replace(self, w_pick=float(phase == "pick"), w_move=float(phase == "move"), w_pass=0.0)


@dataclass(frozen=True)
class PhaseThresholds:
    position: float = 0.02
    orientation: float = 0.15
    dwell: int = 3
    goal_position: float = 0.03
    goal_orientation: float = 0.2

    def __post_init__(self) -> None:
        if min(self.position, self.orientation, self.goal_position, self.goal_orientation) <= 0 or self.dwell < 1:
            raise TaskError("Phase thresholds must be positive and dwell >= 1")


@dataclass(frozen=True)
class PhaseState:
    phase: str
    entered_at: float = 0.0
    dwell: int = 0
    thresholds: PhaseThresholds = PhaseThresholds()


def _vec(value, shape: tuple, name: str, *, unit: bool = False) -> Optional[np.ndarray]:
    if value is None:
        return None
    arr = np.array(value, dtype=float, copy=True)
    if arr.shape != shape or not np.all(np.isfinite(arr)):
        raise TaskError(f"{name} must be a finite array of shape {shape}, got {arr.shape}")
    if unit and np.any(np.abs(np.linalg.norm(arr, axis=-1) - 1.0) > 1e-6):
        raise TaskError(f"{name} must hold unit quaternions")
    arr.setflags(write=False)
    return arr


_REQUIRED = {
    "tray": ("p_target", "q_target", "p_grasp", "q_grasp", "q_move", "l_tray"),
    "ball": ("p_target", "q_star", "p_ball", "l_ball"),
    "handover": ("p_target", "p_obj", "p_pass", "q_phase"),
}


@dataclass(frozen=True, eq=False)
class TaskSpec:
    kind: TaskKind
    home: np.ndarray
    bounds: DerivativeBounds
    weights: CostWeights = CostWeights()
    thresholds: PhaseThresholds = PhaseThresholds()
    gamma: float = 0.1
    epsilon: float = 0.05
    p_target: Optional[np.ndarray] = None
    q_target: Optional[np.ndarray] = None
    p_grasp: Optional[np.ndarray] = None
    q_grasp: Optional[np.ndarray] = None
    q_move: Optional[np.ndarray] = None
    q_star: Optional[np.ndarray] = None
    p_ball: Optional[np.ndarray] = None
    p_pass: Optional[np.ndarray] = None
    p_obj: Optional[np.ndarray] = None
    q_phase: Optional[np.ndarray] = None
    l_tray: Optional[float] = None
    l_ball: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in PHASES:
            raise TaskError(f"Unknown task kind '{self.kind}'")
        if not (0.0 < self.gamma < 1.0):
            raise TaskError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not (self.epsilon > 0):
            raise TaskError(f"epsilon must be positive, got {self.epsilon}")
        home = np.array(self.home, dtype=float, copy=True)
        if home.shape != (self.bounds.dof,):
            raise TaskError(f"home has {home.size} joints, bounds have {self.bounds.dof}")
        home.setflags(write=False)
        object.__setattr__(self, "home", home)
        for name, shape, unit in (
            ("p_target", (3,), False),
            ("q_target", (4,), True),
            ("p_grasp", (2, 3), False),
            ("q_grasp", (2, 4), True),
            ("q_move", (2, 4), True),
            ("q_star", (2, 4), True),
            ("p_ball", (3,), False),
            ("p_pass", (2, 3), False),
            ("p_obj", (3,), False),
            ("q_phase", (3, 2, 4), True),
        ):
            object.__setattr__(self, name, _vec(getattr(self, name), shape, name, unit=unit))
        for name in ("l_tray", "l_ball"):
            value = getattr(self, name)
            if value is not None and not (value > 0):
                raise TaskError(f"{name} must be positive")
        missing = [n for n in _REQUIRED[self.kind] if getattr(self, n) is None]
        if missing:
            raise TaskError(f"{self.kind} task is missing {', '.join(missing)}")

    @property
    def phases(self) -> tuple[str, ...]:
        return PHASES[self.kind]

    def with_goal(self, p_target=None, q_target=None) -> "TaskSpec":
        changes = {}
        if p_target is not None:
            changes["p_target"] = p_target
        if q_target is not None:
            changes["q_target"] = q_target
        return replace(self, **changes)


def initial_phase(task: TaskSpec) -> PhaseState:
    return PhaseState(task.phases[0], 0.0, 0, task.thresholds)


def _check_phase(task: TaskSpec, phase: PhaseState) -> None:
    if phase.phase not in task.phases:
        raise TaskError(f"Phase '{phase.phase}' does not belong to the {task.kind} task {task.phases}")


def collision_mask(task: TaskSpec, phase: PhaseState) -> frozenset:
    """Pairs excluded from the rollout distances: the ball is carried against the links while moving."""
    _check_phase(task, phase)
    if task.kind == "ball" and phase.phase == "move":
        return frozenset({"ball"})
    return frozenset()


# -- totals -----------------------------------------------------------------


@dataclass(frozen=True)
class CostBreakdown:
    """``shared`` is always on; ``parts[phase]`` is multiplied by that phase's gate."""

    shared: np.ndarray
    parts: Mapping[str, np.ndarray]
    terms: Mapping[str, np.ndarray] = field(default_factory=dict)


def _as_batch(rollout: Union[BatchRollout, RolloutResult]) -> BatchRollout:
    return rollout.batch() if isinstance(rollout, RolloutResult) else rollout


def _distances(rollout: BatchRollout, mask: frozenset) -> np.ndarray:
    return rollout.distances[:, 1:][..., rollout.columns(mask)]


def _tray_terms(task: TaskSpec, r: BatchRollout) -> dict[str, np.ndarray]:
    p, q, v = r.ee_positions[:, 1:], r.ee_orientations[:, 1:], r.ee_velocities[:, 1:]
    p1, p2 = p[..., 0, :], p[..., 1, :]
    terms = {
        "collision": collision_cost(_distances(r, frozenset()), task.gamma),
        "joint_deviation": joint_deviation_cost(r.joints[:, 1:], task.home),
        "height": axis_alignment_cost(p1, p2, "z"),
        "relative_velocity": relative_velocity_cost(p1, p2, v[..., 0, :], v[..., 1, :]),
        "pick_position": paired_position_cost(p1, p2, task.p_grasp[0], task.p_grasp[1]),
        "pick_orientation": paired_orientation_cost(q[..., 0, :], q[..., 1, :], task.q_grasp[0], task.q_grasp[1]),
        "separation": ee_distance_cost(p1, p2, task.l_tray),
        "move_orientation": paired_orientation_cost(q[..., 0, :], q[..., 1, :], task.q_move[0], task.q_move[1]),
    }
    if r.tray is None:
        raise TaskError("Rollout has no tray track")
    terms["tray_position"] = position_target_cost(r.tray.positions[:, 1:], task.p_target)
    terms["tray_orientation"] = orientation_target_cost(r.tray.orientations[:, 1:], task.q_target)
    return terms


def _ball_terms(task: TaskSpec, r: BatchRollout) -> dict[str, np.ndarray]:
    p, q, v = r.ee_positions[:, 1:], r.ee_orientations[:, 1:], r.ee_velocities[:, 1:]
    p1, p2 = p[..., 0, :], p[..., 1, :]
    return {
        "collision_pick": collision_cost(_distances(r, frozenset()), task.gamma),
        "collision_move": collision_cost(_distances(r, frozenset({"ball"})), task.gamma),
        "joint_deviation": joint_deviation_cost(r.joints[:, 1:], task.home),
        "planar_alignment": axis_alignment_cost(p1, p2, "yz"),
        "relative_velocity": relative_velocity_cost(p1, p2, v[..., 0, :], v[..., 1, :]),
        "orientation": paired_orientation_cost(q[..., 0, :], q[..., 1, :], task.q_star[0], task.q_star[1]),
        "separation": ee_distance_cost(p1, p2, task.l_ball),
        "eef_obj": eef_obj_alignment_cost(p1, p2, task.p_ball, task.epsilon),
        "obj_target": obj_target_cost(p1, p2, task.p_target, task.epsilon),
    }


def _handover_terms(task: TaskSpec, r: BatchRollout) -> dict[str, np.ndarray]:
    p, q = r.ee_positions[:, 1:], r.ee_orientations[:, 1:]
    pick_target = task.p_obj + task.epsilon * _UP
    terms = {
        "collision": collision_cost(_distances(r, frozenset()), task.gamma),
        "joint_deviation": joint_deviation_cost(r.joints[:, 1:], task.home),
        "planar_alignment": axis_alignment_cost(p[..., 0, :], p[..., 1, :], "yz"),
    }
    for i in range(2):
        terms[f"pick_position_{i + 1}"] = position_target_cost(p[..., i, :], pick_target)
        terms[f"pass_position_{i + 1}"] = position_target_cost(p[..., i, :], task.p_pass[i], "x-only")
        terms[f"place_position_{i + 1}"] = position_target_cost(p[..., i, :], task.p_target)
        for j, name in enumerate(task.phases):
            terms[f"{name}_orientation_{i + 1}"] = orientation_target_cost(q[..., i, :], task.q_phase[j, i])
    return terms


def cost_breakdown(task: TaskSpec, phase: PhaseState, rollout: Union[BatchRollout, RolloutResult]) -> CostBreakdown:
    _check_phase(task, phase)
    r = _as_batch(rollout)
    w = task.weights
    if task.kind == "tray":
        t = _tray_terms(task, r)
        shared = w.w_c * t["collision"] + w.w_theta * t["joint_deviation"] + w.w_z * t["height"] + w.w_v * t["relative_velocity"]
        parts = {
            "pick": w.w_p_pick * t["pick_position"] + w.w_r_pick * t["pick_orientation"],
            "move": w.w_l * t["separation"]
            + w.w_p_tray * t["tray_position"]
            + w.w_r_tray * t["tray_orientation"]
            + w.w_r_move * t["move_orientation"],
        }
    elif task.kind == "ball":
        t = _ball_terms(task, r)
        shared = (
            w.w_theta * t["joint_deviation"]
            + w.w_yz * t["planar_alignment"]
            + w.w_v * t["relative_velocity"]
            + w.w_r * t["orientation"]
            + w.w_l * t["separation"]
        )
        parts = {
            "pick": w.w_c * t["collision_pick"] + w.w_eef_obj * t["eef_obj"],
            "move": w.w_c * t["collision_move"] + w.w_obj_targ * t["obj_target"],
        }
    else:
        t = _handover_terms(task, r)
        shared = w.w_c * t["collision"] + w.w_theta * t["joint_deviation"]
        parts = {}
        for j, name in enumerate(task.phases):
            a1, a2 = w.handover_arm_weights[j]
            position = a1 * t[f"{name}_position_1"] + a2 * t[f"{name}_position_2"]
            orientation = a1 * t[f"{name}_orientation_1"] + a2 * t[f"{name}_orientation_2"]
            parts[name] = w.w_p * position + w.w_r * orientation
        parts["pass"] = parts["pass"] + w.w_yz * t["planar_alignment"]
    return CostBreakdown(np.asarray(shared, dtype=float), parts, t)


def phase_gates(task: TaskSpec, phase: PhaseState) -> dict[str, float]:
    _check_phase(task, phase)
    w = task.weights.gated(task.kind, phase.phase)
    if task.kind == "handover":
        return {"pick": float(phase.phase == "pick"), "pass": w.w_pass, "place": float(phase.phase == "place")}
    return {"pick": w.w_pick, "move": w.w_move}


def assemble_task_cost(
    task: TaskSpec,
    phase: PhaseState,
    rollout: Union[BatchRollout, RolloutResult],
    gates: Optional[Mapping[str, float]] = None,
):
    """Total cost per rollout: shared terms plus the gated phase parts.

    ``gates`` overrides the phase's own gates (one entry per phase name).
    """
    breakdown = cost_breakdown(task, phase, rollout)
    if gates is None:
        gates = phase_gates(task, phase)
    unknown = set(gates) - set(task.phases)
    if unknown:
        raise TaskError(f"Unknown gates {sorted(unknown)} for the {task.kind} task")
    total = breakdown.shared + sum(g * breakdown.parts[name] for name, g in gates.items())
    total = np.asarray(total, dtype=float)
    return float(total[0]) if isinstance(rollout, RolloutResult) else total


# -- phase machine ----------------------------------------------------------


def _pick_error(task: TaskSpec, state: WorldState) -> tuple[float, float]:
    p = state.ee_positions
    q = state.ee_orientations
    if task.kind == "tray":
        pos = float(np.max(np.linalg.norm(p - task.p_grasp, axis=-1)))
        ori = float(np.max(_geodesic(q, task.q_grasp)))
        return pos, ori
    mid = 0.5 * (p[0] + p[1])
    return float(np.linalg.norm(mid - (task.p_ball - task.epsilon * _UP))), 0.0


def advance_phase(task: TaskSpec, phase: PhaseState, state: WorldState, time: float = 0.0) -> PhaseState:
    """One evaluation of the transition rule on a measured state; never skips or reverts."""
    _check_phase(task, phase)
    order = task.phases
    idx = order.index(phase.phase)
    if idx == len(order) - 1:
        return phase
    th = phase.thresholds

    if task.kind == "handover":
        holder = state.grasp.cube_holder
        ready = (phase.phase == "pick" and holder >= 1) or (phase.phase == "pass" and holder == 2)
        if ready:
            logger.debug("Hand-over advances %s -> %s at t=%.2f", phase.phase, order[idx + 1], time)
            return PhaseState(order[idx + 1], time, 0, th)
        return phase

    held = state.grasp.tray if task.kind == "tray" else state.grasp.ball
    pos_err, ori_err = _pick_error(task, state)
    if not (held and pos_err < th.position and ori_err < th.orientation):
        return replace(phase, dwell=0)
    dwell = phase.dwell + 1
    if dwell >= th.dwell:
        logger.debug("%s task advances to %s at t=%.2f", task.kind, order[idx + 1], time)
        return PhaseState(order[idx + 1], time, 0, th)
    return replace(phase, dwell=dwell)


def task_completed(task: TaskSpec, phase: PhaseState, state: WorldState) -> bool:
    """Success predicate: final phase reached, object held, goal within tolerance."""
    _check_phase(task, phase)
    th = phase.thresholds
    if phase.phase != task.phases[-1]:
        return False
    if task.kind == "tray":
        if not state.grasp.tray or state.tray is None:
            return False
        pos = np.linalg.norm(state.tray.position - task.p_target)
        ori = _geodesic(state.tray.orientation, task.q_target)
        return bool(pos <= th.goal_position and ori <= th.goal_orientation)
    if task.kind == "ball":
        if not state.grasp.ball or state.ball is None:
            return False
        mid = 0.5 * (state.ee_positions[0] + state.ee_positions[1])
        return bool(np.linalg.norm(mid + task.epsilon * _UP - task.p_target) <= th.goal_position)
    if state.grasp.cube_holder != 2:
        return False
    return bool(np.linalg.norm(state.ee_positions[1] - task.p_target) <= th.goal_position)


@dataclass(frozen=True)
class TaskObjective:
    """A task in a fixed phase, as the planner sees it."""

    task: TaskSpec
    phase: PhaseState

    @property
    def bounds(self) -> DerivativeBounds:
        return self.task.bounds

    @property
    def mask(self) -> frozenset:
        return collision_mask(self.task, self.phase)

    def __call__(self, rollout: BatchRollout) -> np.ndarray:
        try:
            return assemble_task_cost(self.task, self.phase, rollout)
        except CostError as e:
            raise TaskError(f"Cost evaluation failed: {e}") from e


# -- builders ---------------------------------------------------------------


def _common(scene: SceneDescription, weights, bounds, thresholds) -> dict:
    return {
        "home": scene.home,
        "bounds": bounds if bounds is not None else default_bounds(scene.dof),
        "weights": weights if weights is not None else CostWeights(),
        "thresholds": thresholds if thresholds is not None else PhaseThresholds(),
    }


def tray_task(
    scene: SceneDescription,
    *,
    p_target=None,
    q_target=None,
    weights: Optional[CostWeights] = None,
    bounds: Optional[DerivativeBounds] = None,
    thresholds: Optional[PhaseThresholds] = None,
    gamma: float = 0.1,
) -> TaskSpec:
    """Lift the tray with both arms and carry it to ``p_target`` (default: 20 cm above its start)."""
    if scene.tray is None:
        raise TaskError("Scene has no tray")
    tray = scene.tray
    p_grasp, q_grasp = tray.grasp_poses()
    return TaskSpec(
        kind="tray",
        gamma=gamma,
        p_target=tray.pose.position + 0.2 * _UP if p_target is None else p_target,
        q_target=tray.pose.orientation if q_target is None else q_target,
        p_grasp=p_grasp,
        q_grasp=q_grasp,
        q_move=q_grasp,
        l_tray=tray.length,
        **_common(scene, weights, bounds, thresholds),
    )


def ball_task(
    scene: SceneDescription,
    *,
    p_target=None,
    weights: Optional[CostWeights] = None,
    bounds: Optional[DerivativeBounds] = None,
    thresholds: Optional[PhaseThresholds] = None,
    gamma: float = 0.1,
) -> TaskSpec:
    """Squeeze the ball between both end-effectors and lift it to ``p_target``."""
    if scene.ball is None:
        raise TaskError("Scene has no ball")
    ball = scene.ball
    return TaskSpec(
        kind="ball",
        gamma=gamma,
        epsilon=ball.hold_depth,
        p_target=ball.center + 0.2 * _UP if p_target is None else p_target,
        q_star=ball.contact_orientations,
        p_ball=ball.center,
        l_ball=ball.contact_distance,
        **_common(scene, weights, bounds, thresholds),
    )


def handover_task(
    scene: SceneDescription,
    *,
    p_target=None,
    pass_x: float = -0.05,
    weights: Optional[CostWeights] = None,
    bounds: Optional[DerivativeBounds] = None,
    thresholds: Optional[PhaseThresholds] = None,
    gamma: float = 0.1,
) -> TaskSpec:
    """Arm 1 picks the cube from above, passes it to arm 2, which places it at ``p_target``."""
    if scene.cube is None:
        raise TaskError("Scene has no cube")
    cube = scene.cube
    handles = cube.handles
    p_obj = cube.pose.position
    if handles[0, 2] <= 0:
        raise TaskError("The first cube handle must sit above the cube centre")
    spread = handles[1] - handles[0]
    p_pass = np.array([[pass_x, p_obj[1], p_obj[2]], [pass_x + spread[0], p_obj[1], p_obj[2]]])
    down, facing = POINT_DOWN, FACING
    q_phase = np.array([[down, facing], [down, facing], [down, facing]])
    default_target = np.array([-p_obj[0], p_obj[1], p_obj[2] + handles[1, 2] + 0.05])
    return TaskSpec(
        kind="handover",
        gamma=gamma,
        epsilon=float(handles[0, 2]),
        p_target=default_target if p_target is None else p_target,
        p_obj=p_obj,
        p_pass=p_pass,
        q_phase=q_phase,
        **_common(scene, weights, bounds, thresholds),
    )


TASK_BUILDERS = {"tray": tray_task, "ball": ball_task, "handover": handover_task}
