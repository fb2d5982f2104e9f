"""Sampling-based optimizer and the receding-horizon episode loop.

One planning cycle runs ``M`` iterations of: sample, project onto the derivative
bounds, roll out, cost, pick the elite set, update the Gaussian. The loop then
executes the averaged leading controls and warm-starts the next cycle.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Protocol

import numpy as np

from .metrics import CycleTrace, EpisodeRecord
from .qp_smoother import InfeasibleBoundsError, SolverConfig, build_operator, check_feasibility, project_samples
from .sampler import DegenerateBatchError, GaussianPolicy, MppiConfig, SampleKey, sample, select_elite, update
from .tasks import PhaseState, TaskObjective, TaskSpec, advance_phase, initial_phase, task_completed
from .trajectory import DerivativeBounds, VelocitySequence
from .world import KinematicSurrogate, SceneDescription, WorldModel, WorldState

logger = logging.getLogger(__name__)


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    mppi: MppiConfig = field(default_factory=MppiConfig)
    horizon: int = 20
    dt: float = 0.1
    execute_steps: int = 2
    warm_shift: Optional[int] = None
    time_budget: Optional[float] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.horizon < 3:
            raise PlannerError(f"horizon must be >= 3, got {self.horizon}")
        if not (self.dt > 0):
            raise PlannerError(f"dt must be positive, got {self.dt}")
        if not (1 <= self.execute_steps < self.horizon):
            raise PlannerError(f"Need 1 <= execute_steps < horizon, got {self.execute_steps}")
        if not (0 <= self.shift < self.horizon):
            raise PlannerError(f"Warm-start shift must lie in [0, horizon), got {self.shift}")
        if self.time_budget is not None and not (self.time_budget > 0):
            raise PlannerError("time_budget must be positive when given")
        if self.workers < 1:
            raise PlannerError("workers must be >= 1")

    @property
    def shift(self) -> int:
        return self.execute_steps if self.warm_shift is None else self.warm_shift


@dataclass(frozen=True)
class IterationStats:
    best: float
    elite_mean: float
    best_so_far: float


@dataclass(frozen=True)
class PlanResult:
    best: VelocitySequence
    best_cost: float
    policy: GaussianPolicy
    stats: tuple[IterationStats, ...]
    wall_time: float
    iterations: int
    degraded_count: int


class Objective(Protocol):
    """Batch cost over rollouts plus the bounds and collision mask it plans under."""

    @property
    def bounds(self) -> DerivativeBounds: ...

    @property
    def mask(self) -> frozenset: ...

    def __call__(self, rollout: Any) -> np.ndarray: ...


def optimize(
    world: WorldModel,
    state0: Any,
    objective: Objective,
    policy: GaussianPolicy,
    config: PlannerConfig,
    *,
    cycle: int = 0,
    previous_velocity: Optional[np.ndarray] = None,
) -> PlanResult:
    """One planning cycle. Iteration ``m`` of cycle ``c`` samples with key (seed, c * M + m).

    Infeasible bounds raise ``InfeasibleBoundsError`` before any sampling.
    """
    mppi = config.mppi
    H, dt = config.horizon, config.dt
    if policy.horizon != H:
        raise PlannerError(f"Policy horizon {policy.horizon} does not match planner horizon {H}")
    theta0 = np.asarray(world.joints_of(state0), dtype=float)
    if policy.dof != theta0.size or objective.bounds.dof != theta0.size:
        raise PlannerError(
            f"Dimension mismatch: policy {policy.dof}, bounds {objective.bounds.dof}, state {theta0.size}"
        )

    operator = build_operator(H, policy.dof, theta0, objective.bounds, dt, previous_velocity=previous_velocity)
    check_feasibility(operator)
    solver = replace(config.solver, workers=config.workers) if config.workers > 1 else config.solver

    start = time.perf_counter()
    stats: list[IterationStats] = []
    best_so_far = np.inf
    degraded = 0
    best_seq = policy.mean
    best_cost = np.inf
    iterations = 0
    for m in range(mppi.iterations):
        key = SampleKey(mppi.seed, cycle * mppi.iterations + m)
        raws = sample(policy, mppi.n, key, workers=config.workers)
        projected = project_samples(operator, raws, solver)
        degraded += int(projected.degraded.sum())
        rollout = world.rollout_batch(state0, projected.values, dt, objective.mask)
        costs = np.asarray(objective(rollout), dtype=float)
        try:
            elite = select_elite(costs, mppi.n_elite)
        except DegenerateBatchError as e:
            raise PlannerError(
                f"Degenerate batch at cycle {cycle}, iteration {m}: all {mppi.n} costs are non-finite "
                f"({int(projected.degraded.sum())} degraded projections)"
            ) from e
        policy = update(policy, projected.values[elite], costs[elite], mppi.eta, mppi.beta)
        best_seq = projected.values[elite[0]]
        best_cost = float(costs[elite[0]])
        best_so_far = min(best_so_far, best_cost)
        elite_costs = costs[elite]
        stats.append(IterationStats(best_cost, float(elite_costs[np.isfinite(elite_costs)].mean()), best_so_far))
        iterations = m + 1
        logger.debug("cycle %d iter %d: best %.6g elite mean %.6g", cycle, m, best_cost, stats[-1].elite_mean)
        if config.time_budget is not None and time.perf_counter() - start >= config.time_budget:
            if m < mppi.iterations - 1:
                logger.debug("cycle %d stopped after %d iterations (budget %.3fs)", cycle, iterations, config.time_budget)
            break

    return PlanResult(
        best=VelocitySequence(best_seq, dt),
        best_cost=best_cost,
        policy=policy,
        stats=tuple(stats),
        wall_time=time.perf_counter() - start,
        iterations=iterations,
        degraded_count=degraded,
    )


def step_execution(result: PlanResult, execute_steps: int) -> np.ndarray:
    """Per-joint mean of the first ``execute_steps`` rows of the best sequence."""
    values = result.best.values
    if not (1 <= execute_steps < values.shape[0]):
        raise PlannerError(f"Need 1 <= execute_steps < {values.shape[0]}, got {execute_steps}")
    return values[:execute_steps].mean(axis=0)


def warm_start(policy: GaussianPolicy, shift: int, initial_variance: float) -> GaussianPolicy:
    if not (0 <= shift < policy.horizon):
        raise PlannerError(f"Shift must lie in [0, {policy.horizon}), got {shift}")
    if shift == 0:
        return policy
    mean = np.vstack([policy.mean[shift:], np.repeat(policy.mean[-1:], shift, axis=0)])
    variance = np.vstack([policy.variance[shift:], np.full((shift, policy.dof), float(initial_variance))])
    return GaussianPolicy(mean, variance, policy.sigma_floor)


def plan_task(
    scene: SceneDescription,
    state0: WorldState,
    task: TaskSpec,
    phase: PhaseState,
    policy: GaussianPolicy,
    config: PlannerConfig,
    *,
    cycle: int = 0,
    previous_velocity: Optional[np.ndarray] = None,
    world: Optional[KinematicSurrogate] = None,
) -> PlanResult:
    return optimize(
        world or KinematicSurrogate(scene),
        state0,
        TaskObjective(task, phase),
        policy,
        config,
        cycle=cycle,
        previous_velocity=previous_velocity,
    )


def _dropped(task: TaskSpec, before: WorldState, after: WorldState) -> bool:
    if task.kind == "ball":
        return before.grasp.ball and not after.grasp.ball
    if task.kind == "tray":
        return before.grasp.tray and not after.grasp.tray
    return before.grasp.cube_holder > 0 and after.grasp.cube_holder == 0


def run_episode(
    scene: SceneDescription,
    task: TaskSpec,
    config: PlannerConfig,
    timeout: float,
    *,
    initial_state: Optional[WorldState] = None,
    phase: Optional[PhaseState] = None,
) -> EpisodeRecord:
    """Receding-horizon loop until success, collision, drop, infeasibility or timeout.

    Task time and the timeout run on simulated time (executed steps times dt).
    Only ``optimize`` is wall-clocked.
    """
    if not (timeout > 0):
        raise PlannerError(f"timeout must be positive, got {timeout}")
    world = KinematicSurrogate(scene)
    phase = phase or initial_phase(task)
    objective = TaskObjective(task, phase)
    state = initial_state or world.initial_state(mask=objective.mask)
    mppi = config.mppi
    H, D, dt = config.horizon, scene.dof, config.dt
    initial_variance = mppi.init_sigma**2
    policy = GaussianPolicy.initial(H, D, mppi.init_sigma, sigma_floor=mppi.sigma_floor)

    t_comp: list[float] = []
    trace: list[CycleTrace] = []
    steps = 0
    command: Optional[np.ndarray] = None

    def finish(reason: str) -> EpisodeRecord:
        record = EpisodeRecord(
            success=reason == "none",
            t_task=min(steps * dt, timeout),
            t_comp=tuple(t_comp),
            failure_reason=reason,
            seed=mppi.seed,
            trace=tuple(trace),
        )
        logger.info(
            "%s episode seed=%d: %s after %.1fs (%d cycles)",
            task.kind,
            mppi.seed,
            "success" if record.success else reason,
            record.t_task,
            len(t_comp),
        )
        return record

    if task_completed(task, phase, state):
        return finish("none")

    cycle = 0
    while steps * dt < timeout - 1e-9:
        objective = TaskObjective(task, phase)
        tic = time.perf_counter()
        try:
            result = optimize(world, state, objective, policy, config, cycle=cycle, previous_velocity=command)
        except InfeasibleBoundsError as e:
            if command is None:
                t_comp.append(time.perf_counter() - tic)
                return finish("infeasible")
            logger.warning("Anchored bounds infeasible at cycle %d (%s); replanning without the anchor", cycle, e)
            try:
                result = optimize(world, state, objective, policy, config, cycle=cycle)
            except InfeasibleBoundsError:
                t_comp.append(time.perf_counter() - tic)
                return finish("infeasible")
        t_comp.append(time.perf_counter() - tic)
        trace.append(CycleTrace(phase.phase, result.best_cost))

        command = step_execution(result, config.execute_steps)
        for _ in range(config.execute_steps):
            before = state
            state = world.step(state, command, dt, objective.mask)
            steps += 1
            if np.any(state.distances < 0.0):
                return finish("collision")
            if _dropped(task, before, state):
                return finish("drop")
            if steps * dt >= timeout - 1e-9:
                break

        new_phase = advance_phase(task, phase, state, steps * dt)
        if new_phase.phase != phase.phase:
            logger.info("%s task enters %s at t=%.1fs", task.kind, new_phase.phase, steps * dt)
        phase = new_phase
        if task_completed(task, phase, state):
            return finish("none")
        policy = warm_start(result.policy, config.shift, initial_variance)
        cycle += 1
    return finish("timeout")
