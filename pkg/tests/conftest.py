import os

import pytest
from hypothesis import HealthCheck, settings

from semimatch.geometry import Domain, Grid

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(params=["torus", "square"])
def domain(request):
    return Domain.torus() if request.param == "torus" else Domain.square()


@pytest.fixture
def torus():
    return Domain.torus()


@pytest.fixture
def torus_grid64():
    return Grid(Domain.torus(), 64)


RESULTS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "results")
ACCEPTANCE_SWEEP = dict(ns=[256, 1024, 4096], trials_per_n=32, base_seed=0)
CALIBRATION_SWEEP = dict(ns=[256, 1024], trials_per_n=16, base_seed=1)
LINF_SWEEP = dict(ns=[256, 1024], trials_per_n=50, base_seed=2)


def cached_sweep(name, spec):
    """Records of a pinned sweep; missing trials are computed and appended."""
    from semimatch.experiments import sweep

    os.makedirs(RESULTS, exist_ok=True)
    return sweep(spec["ns"], spec["trials_per_n"], spec["base_seed"], jobs=os.cpu_count() or 1,
                 sink=os.path.join(RESULTS, f"{name}.jsonl"))


@pytest.fixture(scope="session")
def acceptance_records():
    return cached_sweep("acceptance_sweep", ACCEPTANCE_SWEEP)


@pytest.fixture(scope="session")
def linf_records():
    return cached_sweep("linf_sweep", LINF_SWEEP)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get(
        "tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
