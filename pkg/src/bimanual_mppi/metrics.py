"""Episode outcomes and the success-rate / timing statistics over a batch of runs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

FAILURE_REASONS = ("collision", "timeout", "drop", "infeasible", "none")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class CycleTrace:
    phase: str
    best_cost: float


@dataclass(frozen=True)
class EpisodeRecord:
    """One run. ``t_comp`` holds the wall time of every planning cycle; ``t_task`` is
    simulated time at termination."""

    success: bool
    t_task: float
    t_comp: tuple[float, ...]
    failure_reason: str
    seed: int
    trace: tuple[CycleTrace, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "t_comp", tuple(float(t) for t in self.t_comp))
        if self.failure_reason not in FAILURE_REASONS:
            raise MetricsError(f"Unknown failure reason '{self.failure_reason}'")
        if self.success != (self.failure_reason == "none"):
            raise MetricsError("A run succeeds exactly when its failure reason is 'none'")
        if not (np.isfinite(self.t_task) and self.t_task >= 0):
            raise MetricsError(f"t_task must be finite and non-negative, got {self.t_task}")
        if any(not np.isfinite(t) or t < 0 for t in self.t_comp):
            raise MetricsError("Computation times must be finite and non-negative")

    @property
    def n_steps(self) -> int:
        return len(self.t_comp)


@dataclass(frozen=True)
class MetricsSummary:
    n_runs: int
    n_success: int
    success_rate: float
    t_task_mean: float
    t_task_std: float
    t_comp_mean: Optional[float]
    t_comp_std: Optional[float]
    n_steps_total: int
    batch_size: Optional[int] = None


def compute_metrics(records: Sequence[EpisodeRecord], *, batch_size: Optional[int] = None) -> MetricsSummary:
    """Success rate in percent, population statistics of task time over all runs, and
    computation-time statistics pooled over every planning cycle of every run."""
    records = list(records)
    if not records:
        raise MetricsError("compute_metrics needs at least one episode record")
    n_success = sum(1 for r in records if r.success)
    t_task = np.array([r.t_task for r in records])
    t_comp = np.array([t for r in records for t in r.t_comp])
    return MetricsSummary(
        n_runs=len(records),
        n_success=n_success,
        success_rate=100.0 * n_success / len(records),
        t_task_mean=float(t_task.mean()),
        t_task_std=float(t_task.std()),
        t_comp_mean=float(t_comp.mean()) if t_comp.size else None,
        t_comp_std=float(t_comp.std()) if t_comp.size else None,
        n_steps_total=int(t_comp.size),
        batch_size=batch_size,
    )


def pooled_moments(counts: Iterable[int], means: Iterable[float], stds: Iterable[float]) -> tuple[Optional[float], Optional[float]]:
    """Mean and population std of a union of groups known only by (count, mean, std)."""
    n = np.asarray(list(counts), dtype=float)
    m = np.asarray(list(means), dtype=float)
    s = np.asarray(list(stds), dtype=float)
    keep = n > 0
    total = n[keep].sum()
    if total == 0:
        return None, None
    mean = float(np.sum(n[keep] * m[keep]) / total)
    second = float(np.sum(n[keep] * (s[keep] ** 2 + m[keep] ** 2)) / total)
    return mean, float(np.sqrt(max(second - mean**2, 0.0)))
