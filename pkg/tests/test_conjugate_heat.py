import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricciharnack.calibration import trig_field_history
from ricciharnack.conjugate_heat import (
    SolverError,
    conjugacy_residual,
    f_evolution_residual,
    mass_history,
    potential_history,
    solve_conjugate,
    terminal_profile,
)
from ricciharnack.geometry import RoundSphere, build_geometry
from ricciharnack.oracles import sphere_constant_solution, sphere_mode_solution
from ricciharnack.ricci_flow import evolve_ricci


@pytest.fixture(scope="module")
def sphere_traj():
    geom = build_geometry(RoundSphere(n=2, size=64))
    return evolve_ricci(geom, 0.2, 1e-3)


def test_constant_solution_on_sphere(sphere_traj):
    w1 = terminal_profile(sphere_traj, 0.15, "constant", value=2.0)
    hist = solve_conjugate(sphere_traj, w1, 0.15)
    exact = sphere_constant_solution(2, 1.0, 2.0, 0.15, hist.times)
    np.testing.assert_allclose(hist.u()[:, 10], exact, rtol=1e-10)
    # spatially constant data stays constant
    assert np.max(np.ptp(hist.w, axis=1)) < 1e-12


def test_first_harmonic_solution_on_sphere(sphere_traj):
    amp = 0.4
    w1 = terminal_profile(sphere_traj, 0.15, "trig", amplitude=amp)
    hist = solve_conjugate(sphere_traj, w1, 0.15)
    c, b = sphere_mode_solution(2, 1.0, 1.0, amp, 0.15, hist.times)
    exact = c[:, None] + b[:, None] * np.cos(sphere_traj.geometry.theta)[None, :]
    rel = np.max(np.abs(hist.u() / exact - 1.0))
    assert rel < 2e-3


def test_mode_oracle_frozen():
    # tau_1 = 0.1 on the unit 2-sphere: r^2 goes 1 -> 0.8 backward
    c, b = sphere_mode_solution(2, 1.0, 1.0, 1.0, 0.1, 0.0)
    assert c == pytest.approx(0.8)
    assert b == pytest.approx(0.8 * 0.8)


def test_solver_rejects_bad_interval(flat32):
    traj = evolve_ricci(flat32, 0.1, 0.01)
    w1 = np.zeros(flat32.shape)
    with pytest.raises(SolverError):
        solve_conjugate(traj, w1, 0.1)
    with pytest.raises(SolverError):
        solve_conjugate(traj, np.full(flat32.shape, np.nan), 0.05)


def test_kernel_mass_conserved(flat_kernel_run):
    _, hist, _ = flat_kernel_run
    mass = mass_history(hist)
    assert np.max(np.abs(mass - 1.0)) < 1e-4


@given(lam=st.floats(1e-3, 1e3))
@settings(max_examples=5, deadline=None)
def test_scaling_invariance(flat_kernel_run, lam):
    traj, hist, _ = flat_kernel_run
    w1 = hist.w[-1] + math.log(lam)
    scaled = solve_conjugate(traj, w1, float(hist.times[-1]))
    np.testing.assert_allclose(scaled.w, hist.w + math.log(lam), atol=1e-9 * max(1.0, abs(math.log(lam))))
    # the potential only shifts by a constant
    diff = potential_history(scaled) - potential_history(hist)
    assert np.ptp(diff) < 1e-8


def test_f_equation_converges():
    res = []
    for N in (32, 64):
        geom = build_geometry(RoundSphere(n=2, size=N))
        traj = evolve_ricci(geom, 0.2, 1e-3)
        w1 = terminal_profile(traj, 0.15, "trig", amplitude=0.5)
        hist = solve_conjugate(traj, w1, 0.15)
        res.append(f_evolution_residual(hist, region=(geom.theta > 0.2) & (geom.theta < math.pi - 0.2)))
    for name in res[0].names():
        assert res[0].max(name) / res[1].max(name) > 3.0, name


def test_conjugacy_small_on_trig_fields(conformal32):
    traj = evolve_ricci(conformal32, 0.1, 1e-3)
    rng = np.random.default_rng(3)
    u = trig_field_history(conformal32, traj.times, rng)
    v = trig_field_history(conformal32, traj.times, rng)
    assert conjugacy_residual(traj, u, v) < 1e-6
    # without the boundary term the pairing picks up [int u v dmu] at the ends
    assert conjugacy_residual(traj, u, v, boundary_term=False) > 1e-3
