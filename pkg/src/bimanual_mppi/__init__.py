from .planner import PlannerConfig, optimize, plan_task, run_episode
from .qp_smoother import project, project_batch
from .sampler import GaussianPolicy, MppiConfig
from .scenes import default_scene, planar_scene
from .tasks import assemble_task_cost, ball_task, handover_task, tray_task

__version__ = "0.1.0"

__all__ = [
    "GaussianPolicy",
    "MppiConfig",
    "PlannerConfig",
    "assemble_task_cost",
    "ball_task",
    "default_scene",
    "handover_task",
    "optimize",
    "plan_task",
    "planar_scene",
    "project",
    "project_batch",
    "run_episode",
    "tray_task",
]
