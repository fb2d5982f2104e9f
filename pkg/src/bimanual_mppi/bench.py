"""Scenario configs, randomized-goal episode suites and their CSV reports."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .config import Settings, load_settings
from .metrics import EpisodeRecord, MetricsSummary, compute_metrics, pooled_moments
from .planner import PlannerConfig, run_episode
from .qp_smoother import SolverConfig
from .sampler import MppiConfig
from .scenes import scene_from_dict
from .tasks import TASK_BUILDERS, CostWeights, PhaseThresholds, TaskSpec
from .trajectory import DerivativeBounds, quat_from_axis_angle, quat_multiply
from .world import SceneDescription

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EPISODE_COLUMNS = [
    "task",
    "batch_size",
    "run",
    "seed",
    "success",
    "failure_reason",
    "t_task_s",
    "n_steps",
    "t_comp_mean_s",
    "t_comp_std_s",
]
SUMMARY_COLUMNS = [
    "task",
    "batch_size",
    "n_runs",
    "success_rate_pct",
    "t_task_mean_s",
    "t_task_std_s",
    "t_comp_pooled_mean_s",
    "t_comp_pooled_std_s",
    "n_steps_total",
]
MAX_BATCH_SIZE = 2**28 - 1
MAX_RUNS = 2**20
MAX_MASTER_SEED = 2**64 - 1

_DEFAULT_OBJECTS = {"tray": ["tray"], "ball": ["ball"], "handover": ["cube"]}
_AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0]), "z": np.array([0.0, 0.0, 1.0])}

Vec3 = Annotated[list[float], Field(min_length=3, max_length=3)]
Quat = Annotated[list[float], Field(min_length=4, max_length=4)]


class BenchError(ValueError):
    pass


class SphereSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    center: Vec3
    radius: float = Field(gt=0)


class BoxSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    center: Vec3
    half_extents: Vec3


class SceneConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    builtin: Literal["planar", "ur_pair"] = "planar"
    objects: Optional[list[Literal["tray", "ball", "cube"]]] = None
    with_obstacles: bool = True
    spheres: list[SphereSpec] = []
    boxes: list[BoxSpec] = []
    object_positions: dict[str, Vec3] = {}


class BoundsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    position: float = Field(default=float(np.pi), ge=0)
    velocity: float = Field(default=1.0, ge=0)
    acceleration: float = Field(default=4.0, ge=0)
    jerk: float = Field(default=40.0, ge=0)


class TaskConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["tray", "ball", "handover"]
    gamma: float = Field(default=0.1, gt=0, lt=1)
    weights: dict[str, Any] = {}
    thresholds: dict[str, float] = {}
    bounds: BoundsConfig = BoundsConfig()

    @field_validator("weights")
    @classmethod
    def _known_weights(cls, value: dict[str, Any]) -> dict[str, Any]:
        known = {f.name for f in fields(CostWeights)}
        unknown = sorted(set(value) - known)
        if unknown:
            raise ValueError(f"unknown weights {unknown}")
        return value

    @field_validator("thresholds")
    @classmethod
    def _known_thresholds(cls, value: dict[str, float]) -> dict[str, float]:
        known = {f.name for f in fields(PhaseThresholds)}
        unknown = sorted(set(value) - known)
        if unknown:
            raise ValueError(f"unknown thresholds {unknown}")
        return value


class PlannerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    horizon: int = Field(default=20, ge=3)
    dt: float = Field(default=0.1, gt=0)
    execute_steps: int = Field(default=2, ge=1)
    iterations: int = Field(default=3, ge=1)
    elite_fraction: float = Field(default=0.1, gt=0, le=1)
    eta: float = Field(default=0.8, gt=0, le=1)
    beta: float = Field(default=1.0, gt=0)
    init_sigma: float = Field(default=0.4, gt=0)
    sigma_floor: float = Field(default=0.02, gt=0)
    warm_shift: Optional[int] = Field(default=None, ge=0)
    time_budget: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _steps_fit_horizon(self) -> "PlannerSettings":
        if self.execute_steps >= self.horizon:
            raise ValueError("execute_steps must be smaller than horizon")
        if self.warm_shift is not None and self.warm_shift >= self.horizon:
            raise ValueError("warm_shift must be smaller than horizon")
        return self


class GoalRanges(BaseModel):
    """Goal position box and an orientation cone (radians) about the listed axes."""

    model_config = ConfigDict(extra="forbid")
    position_low: Vec3
    position_high: Vec3
    orientation_cone: float = Field(default=0.0, ge=0, le=np.pi)
    axes: list[Literal["x", "y", "z"]] = Field(default_factory=lambda: ["z"], min_length=1)
    base_orientation: Optional[Quat] = None

    @model_validator(mode="after")
    def _non_empty_box(self) -> "GoalRanges":
        if any(lo > hi for lo, hi in zip(self.position_low, self.position_high)):
            raise ValueError("position_low must not exceed position_high")
        if self.base_orientation is not None and abs(np.linalg.norm(self.base_orientation) - 1.0) > 1e-6:
            raise ValueError("base_orientation must be a unit quaternion")
        return self


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    schema_version: Literal[1]
    name: str
    scene: SceneConfig = SceneConfig()
    task: TaskConfig
    planner: PlannerSettings = PlannerSettings()
    goals: GoalRanges
    n_runs: int = Field(ge=1, lt=MAX_RUNS)
    batch_sizes: list[int] = Field(min_length=1)
    master_seed: int = Field(default=0, ge=0, le=MAX_MASTER_SEED)
    timeout_s: Optional[float] = Field(default=None, gt=0)
    timing: Literal["wall", "off"] = "wall"

    @field_validator("batch_sizes")
    @classmethod
    def _batch_range(cls, value: list[int]) -> list[int]:
        if any(b < 1 or b > MAX_BATCH_SIZE for b in value):
            raise ValueError(f"batch sizes must lie in [1, {MAX_BATCH_SIZE}]")
        if len(set(value)) != len(value):
            raise ValueError("batch sizes must be distinct")
        return value


def parse_config(doc: Any) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(doc)
    except ValidationError as e:
        raise BenchError(f"Invalid scenario config: {e}") from e


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise BenchError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise BenchError(f"Config {path} is not valid JSON: {e}") from e
    return parse_config(doc)


def build_scene(cfg: ScenarioConfig) -> SceneDescription:
    doc = cfg.scene.model_dump()
    if doc["objects"] is None:
        doc["objects"] = _DEFAULT_OBJECTS[cfg.task.kind]
    try:
        return scene_from_dict(doc)
    except ValueError as e:
        raise BenchError(f"Scene of {cfg.name}: {e}") from e


def build_task(cfg: ScenarioConfig, scene: SceneDescription, *, p_target=None, q_target=None) -> TaskSpec:
    b = cfg.task.bounds
    try:
        kwargs: dict[str, Any] = {
            "weights": CostWeights(**cfg.task.weights),
            "thresholds": PhaseThresholds(**cfg.task.thresholds),
            "bounds": DerivativeBounds.symmetric(
                scene.dof, position=b.position, velocity=b.velocity, acceleration=b.acceleration, jerk=b.jerk
            ),
            "gamma": cfg.task.gamma,
            "p_target": p_target,
        }
        if cfg.task.kind == "tray":
            kwargs["q_target"] = q_target
        return TASK_BUILDERS[cfg.task.kind](scene, **kwargs)
    except (ValueError, TypeError) as e:
        raise BenchError(f"Task of {cfg.name}: {e}") from e


def planner_config(cfg: ScenarioConfig, batch_size: int, seed: int, settings: Optional[Settings] = None) -> PlannerConfig:
    settings = settings or load_settings()
    p = cfg.planner
    return PlannerConfig(
        mppi=MppiConfig(
            n=batch_size,
            n_elite=max(1, int(p.elite_fraction * batch_size)),
            iterations=p.iterations,
            eta=p.eta,
            beta=p.beta,
            seed=seed,
            init_sigma=p.init_sigma,
            sigma_floor=p.sigma_floor,
        ),
        horizon=p.horizon,
        dt=p.dt,
        execute_steps=p.execute_steps,
        warm_shift=p.warm_shift,
        time_budget=p.time_budget,
        solver=SolverConfig(max_iter=settings.qp_max_iter),
    )


def child_seed(master_seed: int, batch_size: int, run: int) -> int:
    """Disjoint bit fields: master (64 bits) | batch size (28 bits) | run (20 bits)."""
    if not (0 <= master_seed <= MAX_MASTER_SEED):
        raise BenchError(f"master seed out of range: {master_seed}")
    if not (1 <= batch_size <= MAX_BATCH_SIZE):
        raise BenchError(f"batch size out of range: {batch_size}")
    if not (0 <= run < MAX_RUNS):
        raise BenchError(f"run index out of range: {run}")
    return (master_seed << 48) | (batch_size << 20) | run


def sample_goal(goals: GoalRanges, base_orientation, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Goal position uniform in the box; orientation turned by a uniform angle in the cone
    about one of the allowed axes. Uses its own stream, separate from the planner's."""
    rng = np.random.Generator(np.random.Philox(key=seed, counter=np.array([0, 0, 0, 1], dtype=np.uint64)))
    position = rng.uniform(np.asarray(goals.position_low), np.asarray(goals.position_high))
    axis = _AXES[goals.axes[int(rng.integers(len(goals.axes)))]]
    angle = rng.uniform(-goals.orientation_cone, goals.orientation_cone)
    base = np.asarray(goals.base_orientation if goals.base_orientation is not None else base_orientation, dtype=float)
    return position, quat_multiply(quat_from_axis_angle(axis, angle), base)


def _fmt(value: Optional[float], digits: int) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def episode_row(cfg: ScenarioConfig, batch_size: int, run: int, record: EpisodeRecord) -> dict[str, str]:
    timed = cfg.timing == "wall" and record.t_comp
    t_comp = np.asarray(record.t_comp)
    return {
        "task": cfg.task.kind,
        "batch_size": str(batch_size),
        "run": str(run),
        "seed": str(record.seed),
        "success": "1" if record.success else "0",
        "failure_reason": record.failure_reason,
        "t_task_s": _fmt(record.t_task, 6),
        "n_steps": str(record.n_steps),
        "t_comp_mean_s": _fmt(float(t_comp.mean()) if timed else None, 9),
        "t_comp_std_s": _fmt(float(t_comp.std()) if timed else None, 9),
    }


def _float(row: dict[str, str], key: str) -> Optional[float]:
    raw = row[key].strip()
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError as e:
        raise BenchError(f"Column {key} holds a non-number: {raw!r}") from e


def summarize_rows(rows: Sequence[dict[str, str]]) -> list[dict[str, str]]:
    """Summary rows, one per (task, batch size), from serialized episode rows.

    Computation-time statistics pool every planning cycle of every run; they are
    recovered exactly from each row's (n_steps, mean, std).
    """
    if not rows:
        raise BenchError("No episode rows to summarize")
    missing = [c for c in EPISODE_COLUMNS if c not in rows[0]]
    if missing:
        raise BenchError(f"Episode rows lack columns {missing}")
    groups: dict[tuple[str, int], list[dict[str, str]]] = {}
    for row in rows:
        try:
            key = (row["task"], int(row["batch_size"]))
        except ValueError as e:
            raise BenchError(f"Bad batch size {row['batch_size']!r}") from e
        groups.setdefault(key, []).append(row)

    out = []
    for (task, batch_size), group in sorted(groups.items()):
        group = sorted(group, key=lambda r: int(r["run"]))
        successes = sum(1 for r in group if r["success"] == "1")
        t_task = np.array([_float(r, "t_task_s") for r in group], dtype=float)
        steps = [int(r["n_steps"]) for r in group]
        timed = [(n, _float(r, "t_comp_mean_s"), _float(r, "t_comp_std_s")) for n, r in zip(steps, group) if n > 0]
        mean = std = None
        if timed and all(m is not None and s is not None for _, m, s in timed):
            mean, std = pooled_moments(*zip(*timed))
        out.append(
            {
                "task": task,
                "batch_size": str(batch_size),
                "n_runs": str(len(group)),
                "success_rate_pct": _fmt(100.0 * successes / len(group), 6),
                "t_task_mean_s": _fmt(float(t_task.mean()), 6),
                "t_task_std_s": _fmt(float(t_task.std()), 6),
                "t_comp_pooled_mean_s": _fmt(mean, 9),
                "t_comp_pooled_std_s": _fmt(std, 9),
                "n_steps_total": str(sum(steps)),
            }
        )
    return out


def write_csv(rows: Sequence[dict[str, str]], path: Path, columns: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_episode_rows(path: str | Path) -> list[dict[str, str]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
    except FileNotFoundError as e:
        raise BenchError(f"Episode file not found: {path}") from e
    if not rows:
        raise BenchError(f"{path} holds no episode rows")
    return rows


@dataclass(frozen=True)
class SuiteResult:
    episodes_path: Path
    summary_path: Path
    rows: tuple[dict[str, str], ...]
    summaries: dict[int, MetricsSummary]


def run_suite(
    cfg: ScenarioConfig,
    output_dir: str | Path | None = None,
    *,
    settings: Optional[Settings] = None,
    workers: Optional[int] = None,
) -> SuiteResult:
    """Every (batch size, run) episode, then ``episodes.csv`` and ``summary.csv``.

    Rows are sorted before writing, so the files do not depend on the worker count.
    """
    settings = settings or load_settings()
    out = Path(output_dir or settings.output_dir)
    workers = workers or settings.workers
    timeout = cfg.timeout_s or settings.episode_timeout_s
    scene = build_scene(cfg)
    base_orientation = scene.tray.pose.orientation if scene.tray is not None else np.array([1.0, 0.0, 0.0, 0.0])
    build_task(cfg, scene)

    def one(job: tuple[int, int]) -> tuple[int, int, EpisodeRecord]:
        batch_size, run = job
        seed = child_seed(cfg.master_seed, batch_size, run)
        p_target, q_target = sample_goal(cfg.goals, base_orientation, seed)
        task = build_task(cfg, scene, p_target=p_target, q_target=q_target)
        record = run_episode(scene, task, planner_config(cfg, batch_size, seed, settings), timeout)
        return batch_size, run, record

    jobs = [(b, r) for b in cfg.batch_sizes for r in range(cfg.n_runs)]
    logger.info("Suite %s: %d episodes over batch sizes %s (%d workers)", cfg.name, len(jobs), cfg.batch_sizes, workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(job) for job in jobs]
    results.sort(key=lambda item: (item[0], item[1]))

    rows = [episode_row(cfg, b, r, rec) for b, r, rec in results]
    summaries: dict[int, MetricsSummary] = {}
    for batch_size in sorted(cfg.batch_sizes):
        records = [rec for b, _, rec in results if b == batch_size]
        summaries[batch_size] = compute_metrics(records, batch_size=batch_size)
        logger.info(
            "batch %d: success %.1f%%, t_task %.2f s", batch_size, summaries[batch_size].success_rate, summaries[batch_size].t_task_mean
        )

    episodes_path = out / "episodes.csv"
    summary_path = out / "summary.csv"
    write_csv(rows, episodes_path, EPISODE_COLUMNS)
    write_csv(summarize_rows(rows), summary_path, SUMMARY_COLUMNS)
    return SuiteResult(episodes_path, summary_path, tuple(rows), summaries)
