import os
import sys

import numpy as np
import pytest

# Add src to path (go up 1 level to project root, then to src)
HERE = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.dirname(HERE)
SRC = os.path.join(PROJECT_ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)
if HERE not in sys.path:
    sys.path.insert(0, HERE)

from bimanual_mppi.scenes import planar_scene  # noqa: E402
from bimanual_mppi.trajectory import DerivativeBounds  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tray_scene():
    return planar_scene(("tray",))


@pytest.fixture(scope="session")
def ball_scene():
    return planar_scene(("ball",))


@pytest.fixture(scope="session")
def cube_scene():
    return planar_scene(("cube",))


@pytest.fixture
def loose_bounds():
    def make(dof: int) -> DerivativeBounds:
        return DerivativeBounds.symmetric(dof, position=100.0, velocity=100.0, acceleration=1e4, jerk=1e6)

    return make


@pytest.fixture
def clean_env(monkeypatch):
    for name in (
        "BIMANUAL_LOG_LEVEL",
        "BIMANUAL_WORKERS",
        "BIMANUAL_OUTPUT_DIR",
        "BIMANUAL_QP_MAX_ITER",
        "BIMANUAL_EPISODE_TIMEOUT_S",
    ):
        monkeypatch.delenv(name, raising=False)
    return monkeypatch
