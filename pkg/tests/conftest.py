import numpy as np
import pytest

from poisson_hotspots.basis import default_basis_set
from poisson_hotspots.model import ProblemData


def small_problem(dims=(4, 3, 5), seed=0, rate=2.0, pop_scale=50.0):
    """Tiny Poisson instance on the default bases for ``dims``."""
    rng = np.random.default_rng(seed)
    pop = rng.uniform(0.5, 1.5, size=dims) * pop_scale
    y = rng.poisson(pop * rate * rng.uniform(0.5, 1.5, size=dims)).astype(float)
    return ProblemData(y, pop, default_basis_set(dims))


@pytest.fixture
def problem():
    return small_problem()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
