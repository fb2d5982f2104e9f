"""
FastAPI planning service: one planning cycle for a published scenario, and
success/timing metrics over posted episode records.
"""
import logging
import os
import sys
from dataclasses import asdict
from typing import Any, List, Optional

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException, status
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

# Add src to path (go up 2 levels to project root, then to src)
HERE = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.dirname(os.path.dirname(HERE))
SRC = os.path.join(PROJECT_ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from bimanual_mppi import __version__
from bimanual_mppi.bench import BenchError, ScenarioConfig, build_scene, build_task, load_config, parse_config, planner_config
from bimanual_mppi.config import configure_logging, load_settings
from bimanual_mppi.metrics import EpisodeRecord, compute_metrics
from bimanual_mppi.planner import PlannerError, plan_task, step_execution
from bimanual_mppi.qp_smoother import InfeasibleBoundsError
from bimanual_mppi.sampler import GaussianPolicy
from bimanual_mppi.tasks import PhaseState, TaskObjective, initial_phase
from bimanual_mppi.world import KinematicSurrogate

load_dotenv()
configure_logging()

logger = logging.getLogger(__name__)

CONFIG_DIR = os.getenv("BIMANUAL_CONFIG_DIR", os.path.join(PROJECT_ROOT, "configs"))

app = FastAPI(
    title="Bimanual MPPI API",
    description="Sampling-based bimanual planning and benchmark metrics",
    version=__version__,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

settings = load_settings()


class PlanRequest(BaseModel):
    scenario: Optional[str] = None
    config: Optional[dict[str, Any]] = None
    joints: Optional[List[float]] = None
    phase: Optional[str] = None
    batch_size: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)


class PlanResponse(BaseModel):
    scenario: str
    phase: str
    command: List[float]
    best_cost: float
    iterations: int
    degraded_count: int
    wall_time_s: float


class EpisodeIn(BaseModel):
    success: bool
    t_task: float
    t_comp: List[float] = []
    failure_reason: str
    seed: int = 0


class MetricsRequest(BaseModel):
    records: List[EpisodeIn]
    batch_size: Optional[int] = None


class MetricsResponse(BaseModel):
    n_runs: int
    n_success: int
    success_rate: float
    t_task_mean: float
    t_task_std: float
    t_comp_mean: Optional[float] = None
    t_comp_std: Optional[float] = None
    n_steps_total: int
    batch_size: Optional[int] = None


class HealthResponse(BaseModel):
    status: str
    version: str
    scenarios: List[str]


def _published() -> List[str]:
    if not os.path.isdir(CONFIG_DIR):
        return []
    return sorted(name[:-5] for name in os.listdir(CONFIG_DIR) if name.endswith(".json"))


def _scenario(request: PlanRequest) -> ScenarioConfig:
    if (request.scenario is None) == (request.config is None):
        raise BenchError("Give exactly one of 'scenario' or 'config'")
    if request.config is not None:
        return parse_config(request.config)
    if request.scenario not in _published():
        raise BenchError(f"Unknown scenario '{request.scenario}'")
    return load_config(os.path.join(CONFIG_DIR, f"{request.scenario}.json"))


@app.post("/api/plan", response_model=PlanResponse)
def plan(request: PlanRequest):
    """Run one planning cycle from the scene's home pose or the given joints."""
    try:
        cfg = _scenario(request)
        scene = build_scene(cfg)
        task = build_task(cfg, scene)
        phase = initial_phase(task) if request.phase is None else PhaseState(request.phase, thresholds=task.thresholds)
        config = planner_config(cfg, request.batch_size or cfg.batch_sizes[0], request.seed, settings)
        world = KinematicSurrogate(scene)
        state = world.initial_state(request.joints, mask=TaskObjective(task, phase).mask)
        policy = GaussianPolicy.initial(
            config.horizon, scene.dof, config.mppi.init_sigma, sigma_floor=config.mppi.sigma_floor
        )
        result = plan_task(scene, state, task, phase, policy, config, world=world)
    except InfeasibleBoundsError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    except PlannerError as e:
        logger.exception("Planning failed")
        raise HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=str(e))

    return PlanResponse(
        scenario=cfg.name,
        phase=phase.phase,
        command=step_execution(result, config.execute_steps).tolist(),
        best_cost=result.best_cost,
        iterations=result.iterations,
        degraded_count=result.degraded_count,
        wall_time_s=result.wall_time,
    )


@app.post("/api/metrics", response_model=MetricsResponse)
def metrics(request: MetricsRequest):
    """Success rate and timing statistics over posted episode records."""
    try:
        records = [EpisodeRecord(**r.model_dump()) for r in request.records]
        summary = compute_metrics(records, batch_size=request.batch_size)
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return MetricsResponse(**asdict(summary))


@app.get("/api/health", response_model=HealthResponse)
def health():
    """Health check endpoint"""
    return HealthResponse(status="ok", version=__version__, scenarios=_published())


if __name__ == "__main__":
    import uvicorn

    print("Starting Bimanual MPPI API on http://localhost:8000")
    uvicorn.run(app, host="0.0.0.0", port=8000)
