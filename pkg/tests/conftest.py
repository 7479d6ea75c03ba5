import numpy as np
import pytest

from noisedeconv.experiments import lti_2d_experiment, scalar_ltv_experiment
from noisedeconv.model import simulate


def run_experiment(ex, seed):
    return simulate(ex.model, ex.x0, ex.u, ex.w_true, ex.v_density, seed=seed)


@pytest.fixture(scope="session")
def scalar_small():
    ex = scalar_ltv_experiment(2000)
    return ex, run_experiment(ex, 1)


@pytest.fixture(scope="session")
def lti_small():
    ex = lti_2d_experiment(2000)
    return ex, run_experiment(ex, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
