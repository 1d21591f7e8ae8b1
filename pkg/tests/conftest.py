import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from svoc import problems
from svoc.forward_solver import solve_forward

settings.register_profile("svoc", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("svoc")


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Load (or compile) the numba kernels once so timed tests measure solves."""
    spec = problems.example2_spec(0.5, 20)
    solve_forward(spec, np.zeros((21, 1)))
    from svoc.mp_solver import solve_unconstrained
    solve_unconstrained(spec)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
