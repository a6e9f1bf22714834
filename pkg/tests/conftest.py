import numpy as np
import pytest
from hypothesis import settings

from rmqcredit.model import GbmSpec, TimeGrid
from rmqcredit.quantizer import build_tree

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# reference parameter set used throughout the numerical section
MU, SIGMA, DELTA, X0, BARRIER = 0.03, 0.09, 0.5, 86.3, 76.0


@pytest.fixture(scope="session")
def gbm():
    return GbmSpec(MU, SIGMA, DELTA).diffusion()


@pytest.fixture(scope="session")
def fig_grid():
    """dt = 0.02, observation at t_m = 1 (m = 50), horizon t_n = 3."""
    return TimeGrid.uniform(0.02, 150, 50)


@pytest.fixture(scope="session")
def tree30(gbm, fig_grid):
    return build_tree(gbm, fig_grid, 30)


@pytest.fixture(scope="session")
def tree100(gbm, fig_grid):
    return build_tree(gbm, fig_grid, 100)


@pytest.fixture(scope="session")
def small_tree(gbm):
    return build_tree(gbm, TimeGrid.uniform(0.05, 12, 6), 12)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
