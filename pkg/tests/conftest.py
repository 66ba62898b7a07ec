import numpy as np
import pytest

from qcurv.geometry import Sphere, Torus
from qcurv.paneitz import geometric_operator, q_curvature, synthetic_curvature, synthetic_operator


@pytest.fixture(scope="session")
def torus():
    return Torus(8)


@pytest.fixture(scope="session")
def sphere():
    return Sphere(12)


@pytest.fixture(scope="session")
def torus_op(torus):
    return geometric_operator(torus)


@pytest.fixture(scope="session")
def sphere_op(sphere):
    return geometric_operator(sphere)


@pytest.fixture(scope="session")
def sphere_q(sphere):
    return q_curvature(sphere)


@pytest.fixture(scope="session")
def synth_torus(torus):
    """Torus operator with the (1,0,0,0) cos/sin pair pushed to eigenvalue -2."""
    return synthetic_operator(torus, {("cos", (1, 0, 0, 0)): -2.0, ("sin", (1, 0, 0, 0)): -2.0})


@pytest.fixture(scope="session")
def q12(torus):
    return synthetic_curvature(torus, 12 * np.pi**2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
