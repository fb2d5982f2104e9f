"""Least-distance projection of velocity sequences onto derivative bounds.

Each joint decouples: the same ``m x H`` block maps one joint's velocities to its
stacked position, velocity, acceleration and jerk rows, so a batch of ``n``
samples is ``n * D`` independent small problems sharing one matrix. They are
solved in stages:

1. samples already inside the bounds are returned untouched;
2. an active-set polish seeded with the rows the raw sample violates;
3. a fixed number of accelerated dual proximal-gradient steps, then a second
   polish seeded from the dual iterate;
4. an exact dual active-set solve for whatever is still unresolved.

Anything that survives all four stages is returned as its least-violating
candidate and flagged ``degraded``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .trajectory import DerivativeBounds, TrajectoryError, VelocitySequence, as_joint_vector

logger = logging.getLogger(__name__)

METHODS = ("passthrough", "polish", "dual", "exact", "degraded")
_PASSTHROUGH, _POLISH, _DUAL, _EXACT, _DEGRADED = range(len(METHODS))

_ACTIVE_EPS = 1e-12
_EXACT_TOL = 1e-12


class ProjectionError(ValueError):
    pass


class InfeasibleBoundsError(ProjectionError):
    def __init__(self, message: str, *, joint: Optional[int] = None):
        super().__init__(message)
        self.joint = joint


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 200
    feas_tol: float = 1e-8
    kkt_tol: float = 1e-6
    power_iter: int = 100
    polish_rounds: int = 12
    workers: int = 1
    chunk_size: int = 256

    def __post_init__(self) -> None:
        for name in ("max_iter", "power_iter", "polish_rounds", "workers", "chunk_size"):
            if getattr(self, name) < 1:
                raise ProjectionError(f"{name} must be >= 1")
        if not (self.feas_tol > 0 and self.kkt_tol > 0):
            raise ProjectionError("Tolerances must be positive")


class BandedConstraintOperator:
    """Stacked derivative rows for every joint, built from one shared per-joint block.

    ``apply`` returns an ``m x D`` array: row ``i`` of joint ``d`` is
    ``block[i] @ s[:, d] + offsets[i, d]``. The full sparse matrix acting on the
    flattened sequence (index ``k * D + d``) is ``kron(block, I_D)``.
    """

    def __init__(
        self,
        block: np.ndarray,
        offsets: np.ndarray,
        lower: np.ndarray,
        upper: np.ndarray,
        row_orders: np.ndarray,
        dt: float,
        previous_velocity: Optional[np.ndarray] = None,
    ):
        self._block = np.asarray(block, dtype=float)
        self._offsets = np.asarray(offsets, dtype=float)
        self._lower = np.asarray(lower, dtype=float)
        self._upper = np.asarray(upper, dtype=float)
        self._orders = np.asarray(row_orders, dtype=int)
        self.dt = float(dt)
        self.previous_velocity = None if previous_velocity is None else np.asarray(previous_velocity, dtype=float)

        norms = np.linalg.norm(self._block, axis=1)
        self._live = norms > 0.0
        self._row_norm = norms[self._live]
        self._scaled = self._block[self._live] / self._row_norm[:, None]
        live_lo = (self._lower - self._offsets)[self._live] / self._row_norm[:, None]
        live_hi = (self._upper - self._offsets)[self._live] / self._row_norm[:, None]
        self._lo_scaled = np.ascontiguousarray(live_lo.T)
        self._hi_scaled = np.ascontiguousarray(live_hi.T)
        self._lipschitz: Optional[float] = None

    @property
    def horizon(self) -> int:
        return int(self._block.shape[1])

    @property
    def dof(self) -> int:
        return int(self._offsets.shape[1])

    @property
    def rows(self) -> int:
        return int(self._block.shape[0])

    @property
    def row_orders(self) -> np.ndarray:
        return self._orders.copy()

    @property
    def block(self) -> np.ndarray:
        return self._block.copy()

    @property
    def lower(self) -> np.ndarray:
        return self._lower.copy()

    @property
    def upper(self) -> np.ndarray:
        return self._upper.copy()

    @property
    def matrix(self) -> sparse.csr_matrix:
        return sparse.kron(sparse.csr_matrix(self._block), sparse.identity(self.dof), format="csr")

    def stacked_bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Offsets and bounds flattened in the row ordering of ``matrix``."""
        return self._offsets.ravel(), self._lower.ravel(), self._upper.ravel()

    def _values(self, seq) -> np.ndarray:
        values = seq.values if isinstance(seq, VelocitySequence) else np.asarray(seq, dtype=float)
        if values.shape[-2:] != (self.horizon, self.dof):
            raise ProjectionError(f"Expected (..., {self.horizon}, {self.dof}) sequence, got {values.shape}")
        return values

    def apply(self, seq) -> np.ndarray:
        return np.matmul(self._block, self._values(seq)) + self._offsets

    def violation(self, seq) -> np.ndarray:
        rows = self.apply(seq)
        over = np.maximum(np.maximum(self._lower - rows, rows - self._upper), 0.0)
        return over.max(axis=(-2, -1))

    def rows_of_order(self, r: int) -> np.ndarray:
        return np.flatnonzero(self._orders == r)

    def lipschitz(self, iterations: int = 100) -> float:
        """Power-iteration estimate of the squared spectral norm of the scaled block."""
        if self._lipschitz is None:
            gram = self._scaled.T @ self._scaled
            v = np.linspace(1.0, 2.0, self.horizon)
            v /= np.linalg.norm(v)
            estimate = 0.0
            for _ in range(iterations):
                w = gram @ v
                norm = np.linalg.norm(w)
                if norm == 0.0:
                    break
                v = w / norm
                estimate = float(v @ gram @ v)
            gershgorin = float(np.max(np.sum(np.abs(self._scaled @ self._scaled.T), axis=1)))
            self._lipschitz = min(1.1 * estimate, gershgorin) if estimate > 0 else gershgorin
        return self._lipschitz


def build_operator(
    horizon: int,
    dof: int,
    theta0,
    bounds: DerivativeBounds,
    dt: float,
    *,
    previous_velocity=None,
) -> BandedConstraintOperator:
    """Constraint rows for a horizon-``horizon`` sequence starting at ``theta0``.

    Row blocks, in order: positions (H + 1, the first one is theta0 itself),
    velocities (H), accelerations (H - 1), jerks (H - 2). With
    ``previous_velocity`` one extra acceleration row and one extra jerk row
    couple the first samples to the command that is currently executing.
    """
    if horizon < 3:
        raise ProjectionError(f"Horizon must be >= 3 for jerk rows to exist, got {horizon}")
    if dof < 1:
        raise ProjectionError(f"dof must be >= 1, got {dof}")
    if not (dt > 0):
        raise ProjectionError(f"dt must be positive, got {dt}")
    try:
        theta0 = as_joint_vector(theta0)
    except TrajectoryError as e:
        raise ProjectionError(f"Invalid theta0: {e}") from e
    if theta0.size != dof or bounds.dof != dof:
        raise ProjectionError(f"theta0 ({theta0.size}) and bounds ({bounds.dof}) must have {dof} joints")

    H = horizon
    eye = np.eye(H)
    blocks: list[tuple[int, np.ndarray, np.ndarray]] = []
    blocks.append((0, np.vstack([np.zeros((1, H)), dt * np.tril(np.ones((H, H)))]), np.tile(theta0, (H + 1, 1))))
    blocks.append((1, eye, np.zeros((H, dof))))

    prev = None
    if previous_velocity is not None:
        try:
            prev = as_joint_vector(previous_velocity)
        except TrajectoryError as e:
            raise ProjectionError(f"Invalid previous velocity: {e}") from e
        if prev.size != dof:
            raise ProjectionError(f"Previous velocity has {prev.size} joints, expected {dof}")
        blocks.append((2, eye[:1] / dt, (-prev / dt)[None, :]))
    blocks.append((2, (eye[1:] - eye[:-1]) / dt, np.zeros((H - 1, dof))))
    if prev is not None:
        blocks.append((3, (eye[1:2] - 2.0 * eye[:1]) / dt**2, (prev / dt**2)[None, :]))
    blocks.append((3, (eye[2:] - 2.0 * eye[1:-1] + eye[:-2]) / dt**2, np.zeros((H - 2, dof))))

    block = np.vstack([b for _, b, _ in blocks])
    offsets = np.vstack([o for _, _, o in blocks])
    orders = np.concatenate([np.full(b.shape[0], r) for r, b, _ in blocks])
    lower = bounds.lower[orders]
    upper = bounds.upper[orders]
    return BandedConstraintOperator(block, offsets, lower, upper, orders, dt, previous_velocity=prev)


def check_feasibility(operator: BandedConstraintOperator, *, tol: float = 1e-9) -> None:
    """Raise ``InfeasibleBoundsError`` if some joint admits no sequence at all.

    Constant rows (theta0 against the position limits) are checked first, then a
    couple of trivial candidates, and only the remaining joints go to an LP.
    """
    dead = ~operator._live
    rel_lo = operator._lower - operator._offsets
    rel_hi = operator._upper - operator._offsets
    for d in range(operator.dof):
        if np.any(rel_lo[dead, d] > tol) or np.any(rel_hi[dead, d] < -tol):
            raise InfeasibleBoundsError(f"Joint {d} starts outside its position limits", joint=d)

    H = operator.horizon
    A = operator._scaled
    for d in range(operator.dof):
        lo, hi = operator._lo_scaled[d], operator._hi_scaled[d]
        candidates = [np.zeros(H)]
        if operator.previous_velocity is not None:
            candidates.append(np.full(H, operator.previous_velocity[d]))
        if any(np.all((A @ c >= lo - tol) & (A @ c <= hi + tol)) for c in candidates):
            continue
        res = linprog(
            np.zeros(H),
            A_ub=np.vstack([A, -A]),
            b_ub=np.concatenate([hi, -lo]),
            bounds=[(None, None)] * H,
            method="highs",
        )
        if res.status == 2:
            raise InfeasibleBoundsError(f"Derivative bounds of joint {d} are contradictory from theta0", joint=d)
        if res.status != 0:
            logger.warning("Feasibility LP for joint %d ended with status %d: %s", d, res.status, res.message)


def _rows(x: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``x @ M`` as one small product per row, so a row rounds the same in any batch."""
    return np.matmul(np.ascontiguousarray(x)[:, None, :], M)[:, 0, :]


def _violation(ax: np.ndarray, lo: np.ndarray, hi: np.ndarray, norms: np.ndarray) -> np.ndarray:
    over = np.maximum(np.maximum(lo - ax, ax - hi), 0.0)
    return np.max(over * norms, axis=-1)


def _polish(
    A: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    y: np.ndarray,
    upper: np.ndarray,
    lower: np.ndarray,
    norms: np.ndarray,
    cfg: SolverConfig,
) -> tuple[np.ndarray, np.ndarray]:
    P, H = y.shape
    x = y.copy()
    ok = np.zeros(P, dtype=bool)
    ay = _rows(y, A.T)
    upper = upper.copy()
    lower = lower.copy() & ~upper
    eye = np.eye(H)
    pending = np.arange(P)
    for _ in range(cfg.polish_rounds):
        if pending.size == 0:
            break
        up, dn = upper[pending], lower[pending]
        lo_p, hi_p, y_p = lo[pending], hi[pending], y[pending]
        active = up | dn
        target = np.where(up, hi_p, lo_p)
        gram = (A.T[None, :, :] * active[:, None, :]) @ A
        diag = gram.diagonal(axis1=1, axis2=2)
        reg = 1e-12 * (1.0 + _rows(diag, np.ones((H, 1)))[:, 0] / H)
        gram = gram + reg[:, None, None] * eye

        resid = np.where(active, ay[pending] - target, 0.0)
        xs = y_p - np.linalg.solve(gram, _rows(resid, A)[..., None])[..., 0]
        err = np.where(active, _rows(xs, A.T) - target, 0.0)
        xs = xs - np.linalg.solve(gram, _rows(err, A)[..., None])[..., 0]
        mu = np.where(active, _rows(np.linalg.solve(gram, (y_p - xs)[..., None])[..., 0], A.T), 0.0)

        ax = _rows(xs, A.T)
        feasible = _violation(ax, lo_p, hi_p, norms) <= cfg.feas_tol
        signs = np.all(np.where(up, mu >= -cfg.kkt_tol, True) & np.where(dn, mu <= cfg.kkt_tol, True), axis=1)
        stationary = np.max(np.abs(xs - y_p + _rows(mu, A)), axis=1) <= cfg.kkt_tol
        good = feasible & signs & stationary
        x[pending[good]] = xs[good]
        ok[pending[good]] = True

        new_up = (up & (mu > 0)) | (ax > hi_p + _ACTIVE_EPS)
        new_dn = ((dn & (mu < 0)) | (ax < lo_p - _ACTIVE_EPS)) & ~new_up
        upper[pending] = new_up
        lower[pending] = new_dn
        pending = pending[~good]
    return x, ok


def _dual_gradient(
    A: np.ndarray, lo: np.ndarray, hi: np.ndarray, y: np.ndarray, lipschitz: float, iterations: int
) -> tuple[np.ndarray, np.ndarray]:
    step = 1.0 / lipschitz
    lam = np.zeros(lo.shape)
    z = lam.copy()
    t = 1.0
    for _ in range(iterations):
        v = z + step * _rows(y - _rows(z, A), A.T)
        lam_next = v - step * np.clip(v / step, lo, hi)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = lam_next + ((t - 1.0) / t_next) * (lam_next - lam)
        lam, t = lam_next, t_next
    return y - _rows(lam, A), lam


def _exact_dual_active_set(A: np.ndarray, lo: np.ndarray, hi: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Goldfarb-Idnani dual method for min 0.5 |x - y|^2 s.t. lo <= A x <= hi."""
    normals = np.vstack([A, -A])
    rhs = np.concatenate([lo, -hi])
    x = y.copy()
    active: list[int] = []
    mult = np.zeros(0)
    for _ in range(50 * normals.shape[0] + 100):
        slack = normals @ x - rhs
        if active:
            slack[active] = np.inf
        p = int(np.argmin(slack))
        if slack[p] >= -_EXACT_TOL:
            return x
        n_p = normals[p]
        mult_plus = np.append(mult, 0.0)
        while True:
            if active:
                na = normals[active]
                r = np.linalg.lstsq(na.T, n_p, rcond=None)[0]
                z = n_p - na.T @ r
            else:
                r = np.zeros(0)
                z = n_p
            t_dual, drop = np.inf, -1
            for j in range(len(active)):
                if r[j] > _EXACT_TOL and mult_plus[j] / r[j] < t_dual:
                    t_dual, drop = mult_plus[j] / r[j], j
            zz = float(z @ z)
            t_primal = -float(n_p @ x - rhs[p]) / zz if zz > 1e-20 else np.inf
            t = min(t_dual, t_primal)
            if not np.isfinite(t):
                raise InfeasibleBoundsError("Dual active-set step is unbounded; constraints are infeasible")
            if np.isfinite(t_primal):
                x = x + t * z
            mult_plus[:-1] -= t * r
            mult_plus[-1] += t
            if t_primal <= t_dual:
                active.append(p)
                mult = mult_plus
                break
            del active[drop]
            mult_plus = np.delete(mult_plus, drop)
    raise ProjectionError("Dual active-set solver exceeded its step limit")


def _solve_problems(
    op: BandedConstraintOperator, y: np.ndarray, joints: np.ndarray, cfg: SolverConfig
) -> tuple[np.ndarray, np.ndarray]:
    A, norms = op._scaled, op._row_norm
    lo, hi = op._lo_scaled[joints], op._hi_scaled[joints]
    x = y.copy()
    method = np.full(y.shape[0], _PASSTHROUGH)

    ay = _rows(y, A.T)
    idx = np.flatnonzero(_violation(ay, lo, hi, norms) > cfg.feas_tol)
    if idx.size == 0:
        return x, method

    xs, ok = _polish(A, lo[idx], hi[idx], y[idx], ay[idx] > hi[idx], ay[idx] < lo[idx], norms, cfg)
    x[idx[ok]] = xs[ok]
    method[idx[ok]] = _POLISH
    rest = idx[~ok]
    if rest.size == 0:
        return x, method

    xd, lam = _dual_gradient(A, lo[rest], hi[rest], y[rest], op.lipschitz(cfg.power_iter), cfg.max_iter)
    axd = _rows(xd, A.T)
    up = (lam > 1e-10) | (axd > hi[rest] - 1e-9)
    dn = ((lam < -1e-10) | (axd < lo[rest] + 1e-9)) & ~up
    xs, ok = _polish(A, lo[rest], hi[rest], y[rest], up, dn, norms, cfg)
    x[rest[ok]] = xs[ok]
    method[rest[ok]] = _DUAL

    for j in np.flatnonzero(~ok):
        p = rest[j]
        try:
            candidate = _exact_dual_active_set(A, lo[p], hi[p], y[p])
        except ProjectionError as e:
            logger.debug("Exact fallback failed for problem %d: %s", p, e)
            candidate = None
        if candidate is not None and _violation(candidate @ A.T, lo[p], hi[p], norms) <= cfg.feas_tol:
            x[p] = candidate
            method[p] = _EXACT
            continue
        pool = [c for c in (candidate, xd[j], xs[j]) if c is not None]
        x[p] = min(pool, key=lambda c: float(_violation(c @ A.T, lo[p], hi[p], norms)))
        method[p] = _DEGRADED
    return x, method


@dataclass(frozen=True)
class ProjectedBatch:
    values: np.ndarray
    degraded: np.ndarray
    max_violation: np.ndarray
    methods: np.ndarray


def _project_chunk(op: BandedConstraintOperator, raws: np.ndarray, cfg: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    k, H, D = raws.shape
    y = raws.transpose(0, 2, 1).reshape(k * D, H)
    joints = np.tile(np.arange(D), k)
    x, method = _solve_problems(op, y, joints, cfg)
    return x.reshape(k, D, H).transpose(0, 2, 1), method.reshape(k, D)


def project_samples(
    operator: BandedConstraintOperator, raws: np.ndarray, solver_cfg: Optional[SolverConfig] = None
) -> ProjectedBatch:
    """Project an ``n x H x D`` array of samples that share one operator.

    Chunk boundaries depend only on ``chunk_size``, so the result does not
    change with the number of workers.
    """
    cfg = solver_cfg or SolverConfig()
    raws = np.asarray(raws, dtype=float)
    if raws.ndim != 3 or raws.shape[1:] != (operator.horizon, operator.dof):
        raise ProjectionError(f"Expected (n, {operator.horizon}, {operator.dof}) samples, got {raws.shape}")
    if not np.all(np.isfinite(raws)):
        raise ProjectionError("Samples contain non-finite values")

    starts = list(range(0, raws.shape[0], cfg.chunk_size))
    def run(start: int) -> tuple[np.ndarray, np.ndarray]:
        return _project_chunk(operator, raws[start : start + cfg.chunk_size], cfg)

    if cfg.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    if parts:
        values = np.concatenate([v for v, _ in parts])
        methods = np.concatenate([m for _, m in parts])
    else:
        values = raws.copy()
        methods = np.zeros((0, operator.dof), dtype=int)
    degraded = np.any(methods == _DEGRADED, axis=1)
    if degraded.any():
        logger.warning("%d of %d projections degraded", int(degraded.sum()), raws.shape[0])
    logger.debug(
        "Projected %d samples: %s",
        raws.shape[0],
        {METHODS[c]: int(n) for c, n in zip(*np.unique(methods, return_counts=True))},
    )
    return ProjectedBatch(values, degraded, operator.violation(values), methods)


@dataclass(frozen=True)
class ProjectionProblem:
    raw: VelocitySequence
    theta0: np.ndarray
    bounds: DerivativeBounds
    dt: float
    previous_velocity: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not (self.dt > 0):
            raise ProjectionError(f"dt must be positive, got {self.dt}")
        if not isinstance(self.raw, VelocitySequence):
            object.__setattr__(self, "raw", VelocitySequence(self.raw, self.dt))
        object.__setattr__(self, "theta0", as_joint_vector(self.theta0))
        if self.previous_velocity is not None:
            object.__setattr__(self, "previous_velocity", as_joint_vector(self.previous_velocity))

    def operator(self) -> BandedConstraintOperator:
        return build_operator(
            self.raw.horizon,
            self.raw.dof,
            self.theta0,
            self.bounds,
            self.dt,
            previous_velocity=self.previous_velocity,
        )


@dataclass(frozen=True)
class ProjectionResult:
    sequence: Optional[VelocitySequence]
    degraded: bool
    max_violation: float
    method: str
    error: Optional[Exception] = None


def _result(batch: ProjectedBatch, i: int, dt: float) -> ProjectionResult:
    return ProjectionResult(
        sequence=VelocitySequence(batch.values[i], dt),
        degraded=bool(batch.degraded[i]),
        max_violation=float(batch.max_violation[i]),
        method=METHODS[int(batch.methods[i].max())],
    )


def project(problem: ProjectionProblem, solver_cfg: Optional[SolverConfig] = None) -> ProjectionResult:
    """Closest bound-respecting sequence to ``problem.raw``; infeasible bounds raise."""
    op = problem.operator()
    check_feasibility(op)
    batch = project_samples(op, problem.raw.values[None], solver_cfg)
    return _result(batch, 0, problem.dt)


def _same_setup(a: ProjectionProblem, b: ProjectionProblem) -> bool:
    if a.raw.values.shape != b.raw.values.shape or a.dt != b.dt:
        return False
    if not np.array_equal(a.theta0, b.theta0):
        return False
    if not (np.array_equal(a.bounds.lower, b.bounds.lower) and np.array_equal(a.bounds.upper, b.bounds.upper)):
        return False
    if (a.previous_velocity is None) != (b.previous_velocity is None):
        return False
    return a.previous_velocity is None or np.array_equal(a.previous_velocity, b.previous_velocity)


def project_batch(
    problems: Sequence[ProjectionProblem], solver_cfg: Optional[SolverConfig] = None
) -> list[ProjectionResult]:
    """Project problems that differ only in ``raw``; errors are reported per result."""
    if not problems:
        return []
    first = problems[0]
    for i, p in enumerate(problems[1:], start=1):
        if not _same_setup(first, p):
            raise ProjectionError(f"Problem {i} does not share theta0/bounds/dt/shape with problem 0")
    op = first.operator()
    try:
        check_feasibility(op)
    except InfeasibleBoundsError as e:
        return [ProjectionResult(None, True, float("inf"), "infeasible", e) for _ in problems]
    batch = project_samples(op, np.stack([p.raw.values for p in problems]), solver_cfg)
    return [_result(batch, i, first.dt) for i in range(len(problems))]
