from __future__ import annotations

import logging
import os
from dataclasses import dataclass

DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_WORKERS = 1
DEFAULT_OUTPUT_DIR = "bench_out"
DEFAULT_QP_MAX_ITER = 200
DEFAULT_EPISODE_TIMEOUT_S = 120.0

_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _get_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def _get_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        return default


@dataclass(frozen=True)
class Settings:
    log_level: str
    workers: int
    output_dir: str
    qp_max_iter: int
    episode_timeout_s: float


def load_settings() -> Settings:
    """Read process settings from the environment (a .env file is loaded by the entry points)."""
    level = os.getenv("BIMANUAL_LOG_LEVEL", DEFAULT_LOG_LEVEL).strip().upper() or DEFAULT_LOG_LEVEL
    return Settings(
        log_level=level,
        workers=max(1, _get_int("BIMANUAL_WORKERS", DEFAULT_WORKERS)),
        output_dir=os.getenv("BIMANUAL_OUTPUT_DIR", DEFAULT_OUTPUT_DIR).strip() or DEFAULT_OUTPUT_DIR,
        qp_max_iter=max(1, _get_int("BIMANUAL_QP_MAX_ITER", DEFAULT_QP_MAX_ITER)),
        episode_timeout_s=_get_float("BIMANUAL_EPISODE_TIMEOUT_S", DEFAULT_EPISODE_TIMEOUT_S),
    )


def configure_logging(level: str | None = None) -> None:
    """Install the root handler once; library modules only create loggers."""
    resolved = (level or load_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, resolved, logging.INFO), format=_LOG_FORMAT)
