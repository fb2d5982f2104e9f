"""Joint-space sequences, finite differences and unit-quaternion helpers.

Quaternions are scalar-first ``(w, x, y, z)`` everywhere in the package. Every
helper broadcasts over leading axes so batched rollouts can reuse them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

QUAT_NORM_TOL = 1e-9
DERIVATIVE_ORDERS = (0, 1, 2, 3)


class TrajectoryError(ValueError):
    pass


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def as_joint_vector(values, *, bimanual: bool = False) -> np.ndarray:
    """Validate a joint vector; ``bimanual`` enforces the two-arm shape (D even, D >= 2)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise TrajectoryError(f"Joint vector must be 1-D and non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise TrajectoryError("Joint vector has non-finite entries")
    if bimanual and (arr.size < 2 or arr.size % 2):
        raise TrajectoryError(f"Bimanual joint vector needs an even dimension >= 2, got {arr.size}")
    return arr


@dataclass(frozen=True)
class VelocitySequence:
    values: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2:
            raise TrajectoryError(f"Velocity sequence must be H x D, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise TrajectoryError("Velocity sequence needs a horizon of at least 2")
        if not np.all(np.isfinite(arr)):
            raise TrajectoryError("Velocity sequence has non-finite entries")
        if not (self.dt > 0):
            raise TrajectoryError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "values", _frozen(arr))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def horizon(self) -> int:
        return int(self.values.shape[0])

    @property
    def dof(self) -> int:
        return int(self.values.shape[1])


SequenceLike = Union[VelocitySequence, np.ndarray]


@dataclass(frozen=True)
class DerivativeBounds:
    """Lower/upper limits per derivative order; rows are r = 0 (position) .. 3 (jerk)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.ndim != 2 or lo.shape[0] != 4 or lo.shape != hi.shape:
            raise TrajectoryError(f"Bounds must both be 4 x D, got {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise TrajectoryError("Bounds must be finite")
        if np.any(lo > hi):
            order, joint = np.argwhere(lo > hi)[0]
            raise TrajectoryError(f"Lower bound exceeds upper bound at order {order}, joint {joint}")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def dof(self) -> int:
        return int(self.lower.shape[1])

    def order(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        if r not in DERIVATIVE_ORDERS:
            raise TrajectoryError(f"Derivative order must be 0..3, got {r}")
        return self.lower[r], self.upper[r]

    @classmethod
    def symmetric(
        cls,
        dof: int,
        *,
        position: float | np.ndarray,
        velocity: float | np.ndarray,
        acceleration: float | np.ndarray,
        jerk: float | np.ndarray,
        position_center: float | np.ndarray = 0.0,
    ) -> "DerivativeBounds":
        half = np.stack(
            [np.broadcast_to(np.asarray(v, dtype=float), (dof,)) for v in (position, velocity, acceleration, jerk)]
        )
        if np.any(half < 0):
            raise TrajectoryError("Symmetric bound magnitudes must be non-negative")
        center = np.zeros((4, dof))
        center[0] = np.broadcast_to(np.asarray(position_center, dtype=float), (dof,))
        return cls(lower=center - half, upper=center + half)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,) or q.shape != (4,):
            raise TrajectoryError(f"Pose needs a 3-vector and a quaternion, got {p.shape} and {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise TrajectoryError("Pose has non-finite entries")
        if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
            raise TrajectoryError(f"Orientation is not unit norm (|q| = {np.linalg.norm(q):.12f})")
        object.__setattr__(self, "position", _frozen(p))
        object.__setattr__(self, "orientation", _frozen(q))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_arrays(cls, position, orientation) -> "Pose":
        """Build from computed arrays, renormalising round-off in the quaternion."""
        return cls(np.asarray(position, dtype=float), quat_normalize(orientation))

    def compose(self, other: "Pose") -> "Pose":
        return Pose.from_arrays(
            self.position + quat_rotate(self.orientation, other.position),
            quat_multiply(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        q_inv = quat_conjugate(self.orientation)
        return Pose.from_arrays(-quat_rotate(q_inv, self.position), q_inv)

    def transform_point(self, point) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, np.asarray(point, dtype=float))


def _values(seq: SequenceLike) -> np.ndarray:
    if isinstance(seq, VelocitySequence):
        return seq.values
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim < 2:
        raise TrajectoryError(f"Sequence must be at least H x D, got shape {arr.shape}")
    return arr


def _check_dt(dt: float) -> float:
    if not (dt > 0) or not np.isfinite(dt):
        raise TrajectoryError(f"dt must be positive and finite, got {dt}")
    return float(dt)


def finite_difference(seq: SequenceLike, order: int, dt: float) -> np.ndarray:
    """Forward difference of ``order`` (1 or 2) along the time axis, scaled by dt**order."""
    if order not in (1, 2):
        raise TrajectoryError(f"Finite-difference order must be 1 or 2, got {order}")
    dt = _check_dt(dt)
    values = _values(seq)
    if values.shape[-2] <= order:
        raise TrajectoryError(f"Horizon {values.shape[-2]} too short for a difference of order {order}")
    return np.diff(values, n=order, axis=-2) / dt**order


def integrate_velocities(theta0, seq: SequenceLike, dt: float) -> np.ndarray:
    """Explicit Euler positions, (H + 1) x D; broadcasts over leading batch axes of ``seq``."""
    dt = _check_dt(dt)
    values = _values(seq)
    start = np.asarray(theta0, dtype=float)
    if start.shape[-1] != values.shape[-1]:
        raise TrajectoryError(f"theta0 has {start.shape[-1]} joints, sequence has {values.shape[-1]}")
    start = np.broadcast_to(start, values.shape[:-2] + (values.shape[-1],))
    steps = np.concatenate([start[..., None, :], dt * values], axis=-2)
    return np.cumsum(steps, axis=-2)


def derivative_profile(theta0, seq: SequenceLike, dt: float) -> dict[int, np.ndarray]:
    """All four bounded quantities of a sequence: positions, velocities, accelerations, jerks."""
    values = _values(seq)
    profile = {0: integrate_velocities(theta0, values, dt), 1: np.array(values)}
    profile[2] = finite_difference(values, 1, dt) if values.shape[-2] > 1 else values[..., :0, :]
    profile[3] = finite_difference(values, 2, dt) if values.shape[-2] > 2 else values[..., :0, :]
    return profile


# -- quaternion algebra -----------------------------------------------------


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_conjugate(q) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half) * np.ones_like(axis[..., :1]), np.sin(half) * axis], axis=-1)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def quat_from_matrix(matrix) -> np.ndarray:
    """Rotation matrix to quaternion with w >= 0, branching on the largest diagonal term."""
    m = np.asarray(matrix, dtype=float)
    m00, m01, m02 = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    m10, m11, m12 = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    m20, m21, m22 = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    trace = m00 + m11 + m22
    tiny = 1e-12
    s0 = 2.0 * np.sqrt(np.maximum(1.0 + trace, tiny))
    s1 = 2.0 * np.sqrt(np.maximum(1.0 + m00 - m11 - m22, tiny))
    s2 = 2.0 * np.sqrt(np.maximum(1.0 - m00 + m11 - m22, tiny))
    s3 = 2.0 * np.sqrt(np.maximum(1.0 - m00 - m11 + m22, tiny))
    candidates = np.stack(
        [
            np.stack([0.25 * s0, (m21 - m12) / s0, (m02 - m20) / s0, (m10 - m01) / s0], axis=-1),
            np.stack([(m21 - m12) / s1, 0.25 * s1, (m01 + m10) / s1, (m02 + m20) / s1], axis=-1),
            np.stack([(m02 - m20) / s2, (m01 + m10) / s2, 0.25 * s2, (m12 + m21) / s2], axis=-1),
            np.stack([(m10 - m01) / s3, (m02 + m20) / s3, (m12 + m21) / s3, 0.25 * s3], axis=-1),
        ],
        axis=-2,
    )
    case = np.argmax(np.stack([trace, m00, m11, m22], axis=-1), axis=-1)
    q = np.take_along_axis(candidates, case[..., None, None], axis=-2)[..., 0, :]
    q = np.where(q[..., :1] < 0, -q, q)
    return quat_normalize(q)


def _geodesic(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    dot = np.abs(np.sum(q1 * q2, axis=-1))
    return 2.0 * np.arccos(np.clip(dot, 0.0, 1.0))


def quat_geodesic(q1, q2, *, tol: float = QUAT_NORM_TOL):
    """Rotation angle 2*arccos|<q1, q2>| in [0, pi]; rejects inputs off the unit sphere."""
    a = np.asarray(q1, dtype=float)
    b = np.asarray(q2, dtype=float)
    for name, q in (("q1", a), ("q2", b)):
        if q.shape[-1] != 4:
            raise TrajectoryError(f"{name} must end in a 4-vector, got shape {q.shape}")
        if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > tol):
            raise TrajectoryError(f"{name} is not a unit quaternion")
    angle = _geodesic(a, b)
    return float(angle) if np.ndim(angle) == 0 else angle
