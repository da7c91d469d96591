import numpy as np
import pytest

from memmpc.config import Problem, load_scenario


@pytest.fixture(scope="session")
def di_problem():
    return Problem(load_scenario("double-integrator"))


@pytest.fixture(scope="session")
def uni_problem():
    return Problem(load_scenario("unicycle"))


@pytest.fixture(scope="session")
def servo_problem():
    return Problem(load_scenario("servo"))


def central_difference(f, z, h=1e-6):
    z = np.asarray(z, dtype=float)
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


# one line per acceptance criterion, printed at the end of the session
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
