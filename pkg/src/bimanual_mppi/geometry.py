"""Closest-point distances between capsules, spheres and boxes.

Everything broadcasts over leading axes: a whole batch of rollouts is one call.
Distances are signed, positive when separated.
"""
from __future__ import annotations

import numpy as np

from .trajectory import quat_conjugate, quat_rotate

_EPS = 1e-12
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
BOX_SEARCH_ITERATIONS = 40


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def point_segment_distance(point, a, b) -> np.ndarray:
    p, a, b = (np.asarray(v, dtype=float) for v in (point, a, b))
    ab = b - a
    denom = _dot(ab, ab)
    t = np.clip(_dot(p - a, ab) / np.where(denom > _EPS, denom, 1.0), 0.0, 1.0)
    t = np.where(denom > _EPS, t, 0.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def segment_segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Shortest distance between segments [p1, q1] and [p2, q2] (Ericson's clamped solution)."""
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)
    a_ok = a > _EPS
    e_ok = e > _EPS
    safe_a = np.where(a_ok, a, 1.0)
    safe_e = np.where(e_ok, e, 1.0)

    denom = a * e - b * b
    s = np.where(denom > _EPS, np.clip((b * f - c * e) / np.where(denom > _EPS, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0), np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)

    # degenerate segments collapse to points
    s = np.where(a_ok, np.where(e_ok, s, np.clip(-c / safe_a, 0.0, 1.0)), 0.0)
    t = np.where(e_ok, np.where(a_ok, t, np.clip(f / safe_e, 0.0, 1.0)), 0.0)

    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def box_sdf(points, center, half_extents) -> np.ndarray:
    """Signed distance to an axis-aligned box."""
    q = np.abs(np.asarray(points, dtype=float) - center) - half_extents
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def segment_box_distance(a, b, center, half_extents, *, iterations: int = BOX_SEARCH_ITERATIONS) -> np.ndarray:
    """Minimum of the box SDF along the segment; the SDF of a convex set is convex, so a
    golden-section search over the segment parameter finds it."""
    a = np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    shape = np.broadcast_shapes(a.shape[:-1], ab.shape[:-1], np.shape(center)[:-1], np.shape(half_extents)[:-1])
    lo = np.zeros(shape)
    hi = np.ones(shape)

    def f(t: np.ndarray) -> np.ndarray:
        return box_sdf(a + t[..., None] * ab, center, half_extents)

    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(iterations):
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        new_x1 = hi - _GOLDEN * (hi - lo)
        new_x2 = lo + _GOLDEN * (hi - lo)
        x1, x2 = np.where(left, new_x1, x2), np.where(left, x1, new_x2)
        f_new = f(np.where(left, x1, x2))
        f1, f2 = np.where(left, f_new, f2), np.where(left, f1, f_new)
    best = np.minimum(np.minimum(f1, f2), np.minimum(f(np.zeros(shape)), f(np.ones(shape))))
    return best


def capsule_capsule_distance(p1, q1, r1, p2, q2, r2) -> np.ndarray:
    return segment_segment_distance(p1, q1, p2, q2) - r1 - r2


def capsule_sphere_distance(a, b, radius, center, sphere_radius) -> np.ndarray:
    return point_segment_distance(center, a, b) - radius - sphere_radius


def capsule_box_distance(a, b, radius, center, half_extents, orientation=None) -> np.ndarray:
    """Capsule against a box; ``orientation`` (w, x, y, z) makes it an oriented box."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    center = np.asarray(center, dtype=float)
    if orientation is not None:
        inv = quat_conjugate(orientation)
        a = quat_rotate(inv, a - center)
        b = quat_rotate(inv, b - center)
        center = np.zeros(3)
    return segment_box_distance(a, b, center, half_extents) - radius
