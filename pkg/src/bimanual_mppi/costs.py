"""Cost terms over rollout steps.

Each term takes time along axis -2 (vectors) or -1 (scalars per step) and sums
it away, so a batch of n rollouts costs one call and yields n values. Plain
single-rollout inputs return a float.
"""
from __future__ import annotations

from typing import Iterable, Literal, Union

import numpy as np

from .trajectory import TrajectoryError, quat_geodesic

NormMode = Literal["full", "x-only"]
Axes = Union[str, Iterable[str]]

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
_UP = np.array([0.0, 0.0, 1.0])


class CostError(ValueError):
    pass


def _out(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def _arrays(*values) -> list[np.ndarray]:
    arrays = [np.asarray(v, dtype=float) for v in values]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise CostError(f"Sequences must have equal shapes, got {sorted(shapes)}")
    return arrays


def collision_cost(d_sequence, gamma: float):
    """Discounted barrier on consecutive distances plus one unit per penetrating (step, pair)."""
    if not (0.0 < gamma < 1.0):
        raise CostError(f"gamma must lie in (0, 1), got {gamma}")
    d = np.asarray(d_sequence, dtype=float)
    if d.ndim < 2:
        raise CostError(f"Distances must be H x B, got shape {d.shape}")
    barrier = np.maximum(-d[..., 1:, :] + (1.0 - gamma) * d[..., :-1, :], 0.0)
    penetration = (d < 0.0).astype(float)
    return _out(barrier.sum(axis=(-2, -1)) + penetration.sum(axis=(-2, -1)))


def joint_deviation_cost(theta_sequence, theta_home):
    theta = np.asarray(theta_sequence, dtype=float)
    home = np.asarray(theta_home, dtype=float)
    if theta.shape[-1] != home.shape[-1]:
        raise CostError(f"Joint dimension mismatch: {theta.shape[-1]} vs {home.shape[-1]}")
    return _out(np.linalg.norm(theta - home, axis=-1).sum(axis=-1))


def _axis_indices(axes: Axes) -> list[int]:
    names = list(axes)
    if not names:
        raise CostError("Axis set must not be empty")
    unknown = [a for a in names if a not in _AXIS_INDEX]
    if unknown:
        raise CostError(f"Unknown axes {unknown}; use x, y, z")
    return sorted({_AXIS_INDEX[a] for a in names})


def axis_alignment_cost(p1_seq, p2_seq, axes: Axes):
    idx = _axis_indices(axes)
    p1, p2 = _arrays(p1_seq, p2_seq)
    return _out(np.linalg.norm((p1 - p2)[..., idx], axis=-1).sum(axis=-1))


def relative_velocity_cost(p1_seq, p2_seq, v1_seq, v2_seq):
    p1, p2, v1, v2 = _arrays(p1_seq, p2_seq, v1_seq, v2_seq)
    radial = np.sum((p1 - p2) * (v1 - v2), axis=-1)
    return _out(np.sqrt(np.sum(radial**2, axis=-1)))


def position_target_cost(p_seq, target, norm_mode: NormMode = "full"):
    p = np.asarray(p_seq, dtype=float)
    t = np.asarray(target, dtype=float)
    if not np.all(np.isfinite(t)):
        raise CostError("Target must be finite")
    if norm_mode == "full":
        return _out(np.linalg.norm(p - t, axis=-1).sum(axis=-1))
    if norm_mode == "x-only":
        return _out(np.abs(p[..., 0] - t[..., 0]).sum(axis=-1))
    raise CostError(f"Unknown norm mode '{norm_mode}'")


def orientation_target_cost(q_seq, q_target):
    try:
        angles = quat_geodesic(np.asarray(q_seq, dtype=float), np.asarray(q_target, dtype=float), tol=1e-6)
    except TrajectoryError as e:
        raise CostError(str(e)) from e
    return _out(np.sum(angles, axis=-1))


def paired_orientation_cost(q1_seq, q2_seq, q1_target, q2_target):
    """Half the summed per-arm geodesic costs."""
    return _out(0.5 * (np.asarray(orientation_target_cost(q1_seq, q1_target)) + orientation_target_cost(q2_seq, q2_target)))


def paired_position_cost(p1_seq, p2_seq, p1_target, p2_target):
    return _out(0.5 * (np.asarray(position_target_cost(p1_seq, p1_target)) + position_target_cost(p2_seq, p2_target)))


def ee_distance_cost(p1_seq, p2_seq, l: float):
    if not (l > 0):
        raise CostError(f"Separation target must be positive, got {l}")
    p1, p2 = _arrays(p1_seq, p2_seq)
    return _out(np.sum((np.linalg.norm(p1 - p2, axis=-1) - l) ** 2, axis=-1))


def _midpoint(p1_seq, p2_seq) -> np.ndarray:
    p1, p2 = _arrays(p1_seq, p2_seq)
    return 0.5 * (p1 + p2)


def eef_obj_alignment_cost(p1_seq, p2_seq, p_ball, epsilon: float):
    if not (epsilon > 0):
        raise CostError(f"epsilon must be positive, got {epsilon}")
    c = _midpoint(p1_seq, p2_seq)
    return _out(np.linalg.norm(c - (np.asarray(p_ball, dtype=float) - epsilon * _UP), axis=-1).sum(axis=-1))


def obj_target_cost(p1_seq, p2_seq, p_target, epsilon: float):
    if not (epsilon > 0):
        raise CostError(f"epsilon must be positive, got {epsilon}")
    c = _midpoint(p1_seq, p2_seq)
    return _out(np.linalg.norm(c + epsilon * _UP - np.asarray(p_target, dtype=float), axis=-1).sum(axis=-1))
