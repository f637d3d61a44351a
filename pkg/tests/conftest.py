import math

import numpy as np
import pytest

from ricciharnack.conjugate_heat import solve_conjugate, terminal_profile
from ricciharnack.geometry import ConformalTorus2D, FlatTorus, RoundSphere, build_geometry
from ricciharnack.ricci_flow import evolve_ricci

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def conformal_phi0(x, y):
    return 0.1 * np.sin(x) + 0.05 * np.sin(x + y)


@pytest.fixture(scope="session")
def flat32():
    return build_geometry(FlatTorus(n=2, sizes=(32, 32)))


@pytest.fixture(scope="session")
def sphere64():
    return build_geometry(RoundSphere(n=2, size=64))


@pytest.fixture(scope="session")
def conformal32():
    return build_geometry(ConformalTorus2D(sizes=(32, 32), phi0=conformal_phi0))


@pytest.fixture(scope="session")
def flat_kernel_run():
    """Flat 32^2 torus, torus heat kernel terminal data, T = 0.3."""
    geom = build_geometry(FlatTorus(n=2, sizes=(32, 32)))
    traj = evolve_ricci(geom, 0.3, 0.0025)
    center = (math.pi, math.pi)
    w1 = terminal_profile(traj, 0.25, "heat_kernel", center=center)
    return traj, solve_conjugate(traj, w1, 0.25, 0.0), center


@pytest.fixture(scope="session")
def sphere_gauss_run():
    geom = build_geometry(RoundSphere(n=2, size=64))
    traj = evolve_ricci(geom, 0.2, 0.001)
    w1 = terminal_profile(traj, 0.15, "gaussian", center=(0.0,))
    return traj, solve_conjugate(traj, w1, 0.15, 0.0)
