"""Diagonal Gaussian sampling policy with elite selection and weighted updates."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_FLOOR = 0.02
DEFAULT_INIT_SIGMA = 0.4
MAX_SEED = 2**128 - 1


class SamplerError(ValueError):
    pass


class DegenerateBatchError(SamplerError):
    pass


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianPolicy:
    """Mean and per-coordinate variance over an H x D velocity sequence."""

    mean: np.ndarray
    variance: np.ndarray
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        if mean.ndim != 2 or var.shape != mean.shape:
            raise SamplerError(f"Mean and variance must both be H x D, got {mean.shape} and {var.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise SamplerError("Policy has non-finite entries")
        if not (self.sigma_floor > 0):
            raise SamplerError(f"sigma_floor must be positive, got {self.sigma_floor}")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "variance", _frozen(np.maximum(var, self.sigma_floor**2)))

    @classmethod
    def initial(
        cls,
        horizon: int,
        dof: int,
        sigma: float = DEFAULT_INIT_SIGMA,
        *,
        sigma_floor: float = DEFAULT_SIGMA_FLOOR,
        mean: Optional[np.ndarray] = None,
    ) -> "GaussianPolicy":
        start = np.zeros((horizon, dof)) if mean is None else np.asarray(mean, dtype=float)
        return cls(start, np.full((horizon, dof), float(sigma) ** 2), sigma_floor)

    @property
    def horizon(self) -> int:
        return int(self.mean.shape[0])

    @property
    def dof(self) -> int:
        return int(self.mean.shape[1])

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class MppiConfig:
    n: int = 256
    n_elite: int = 25
    iterations: int = 3
    eta: float = 0.8
    beta: float = 1.0
    seed: int = 0
    init_sigma: float = DEFAULT_INIT_SIGMA
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    def __post_init__(self) -> None:
        if not (1 <= self.n_elite <= self.n):
            raise SamplerError(f"Need 1 <= n_elite <= n, got n_elite={self.n_elite}, n={self.n}")
        if self.iterations < 1:
            raise SamplerError(f"iterations must be >= 1, got {self.iterations}")
        if not (0.0 < self.eta <= 1.0):
            raise SamplerError(f"eta must lie in (0, 1], got {self.eta}")
        if not (self.beta > 0):
            raise SamplerError(f"beta must be positive, got {self.beta}")
        if not (0 <= self.seed <= MAX_SEED):
            raise SamplerError("seed must be a non-negative integer of at most 128 bits")
        if not (self.init_sigma > 0 and self.sigma_floor > 0):
            raise SamplerError("init_sigma and sigma_floor must be positive")


@dataclass(frozen=True)
class SampleKey:
    """Position in the counter-based stream: one per optimizer iteration."""

    seed: int
    iteration: int = 0


def _sample_rng(key: SampleKey, index: int) -> np.random.Generator:
    counter = np.array([0, index, key.iteration, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key.seed, counter=counter))


def _fill(policy: GaussianPolicy, key: SampleKey, out: np.ndarray, start: int) -> None:
    std = policy.std
    for offset in range(out.shape[0]):
        noise = _sample_rng(key, start + offset).standard_normal(policy.mean.shape)
        out[offset] = policy.mean + std * noise


def sample(policy: GaussianPolicy, n: int, key: SampleKey, *, workers: int = 1) -> np.ndarray:
    """Draw ``n x H x D`` sequences; sample ``j`` depends only on (seed, iteration, j)."""
    if n < 1:
        raise SamplerError(f"n must be >= 1, got {n}")
    if not (0 <= key.seed <= MAX_SEED) or key.iteration < 0:
        raise SamplerError(f"Invalid sample key {key}")
    out = np.empty((n,) + policy.mean.shape)
    if workers <= 1 or n < 2 * workers:
        _fill(policy, key, out, 0)
        return out
    bounds = np.linspace(0, n, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_fill, policy, key, out[a:b], a) for a, b in zip(bounds[:-1], bounds[1:])]
        for f in futures:
            f.result()
    return out


def select_elite(costs, n_elite: int) -> np.ndarray:
    """Indices of the ``n_elite`` cheapest samples, ascending, ties to the lower index."""
    c = np.asarray(costs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise SamplerError("Costs must be a non-empty 1-D array")
    if not (1 <= n_elite <= c.size):
        raise SamplerError(f"n_elite must be in [1, {c.size}], got {n_elite}")
    c = np.where(np.isnan(c), np.inf, c)
    if np.all(np.isposinf(c)):
        raise DegenerateBatchError(f"All {c.size} costs are infinite or NaN")
    return np.argsort(c, kind="stable")[:n_elite]


def update(policy: GaussianPolicy, elite_samples, elite_costs, eta: float, beta: float) -> GaussianPolicy:
    """Exponentially weighted mean/variance step; costs are shifted by their minimum first."""
    samples = np.asarray(elite_samples, dtype=float)
    costs = np.asarray(elite_costs, dtype=float)
    if samples.ndim != 3 or samples.shape[0] == 0 or samples.shape[1:] != policy.mean.shape:
        raise SamplerError(f"Elite samples must be k x {policy.mean.shape}, got {samples.shape}")
    if costs.shape != (samples.shape[0],):
        raise SamplerError("One cost per elite sample is required")
    if not (0.0 < eta <= 1.0) or not (beta > 0):
        raise SamplerError(f"Need eta in (0, 1] and beta > 0, got eta={eta}, beta={beta}")

    costs = np.where(np.isnan(costs), np.inf, costs)
    finite = np.isfinite(costs)
    if not finite.any():
        raise DegenerateBatchError("Elite set has no finite cost")
    weights = np.where(finite, np.exp(-(costs - costs[finite].min()) / beta), 0.0)
    weights = weights / weights.sum()

    mean = (1.0 - eta) * policy.mean + eta * np.tensordot(weights, samples, axes=1)
    spread = np.tensordot(weights, (samples - mean) ** 2, axes=1)
    variance = (1.0 - eta) * policy.variance + eta * spread
    return GaussianPolicy(mean, variance, policy.sigma_floor)
