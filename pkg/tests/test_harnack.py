import math

import numpy as np
import pytest

from ricciharnack.conjugate_heat import potential_history, solve_conjugate, terminal_profile
from ricciharnack.geometry import RoundSphere, build_geometry
from ricciharnack.harnack import (
    HypothesisError,
    IntegratedHarnackParams,
    check_harnack_sign,
    forward_heat_kernel_history,
    harnack_P,
    harnack_ratio_check,
    integrated_harnack_check,
    liyau_form,
    measure_beta,
    pinching_gap,
    pinching_identity_residual,
    random_pairs,
)
from ricciharnack.oracles import euclidean_kernel_harnack, torus_kernel_harnack
from ricciharnack.ricci_flow import evolve_ricci


def test_euclidean_oracle_values():
    assert euclidean_kernel_harnack(2, 0.0, 0.5) == pytest.approx(-4.0)
    assert euclidean_kernel_harnack(3, 1.0, 0.5) == pytest.approx(-7.0)


def test_P_on_flat_kernel_matches_lattice_oracle(flat_kernel_run):
    traj, hist, center = flat_kernel_run
    geom = traj.geometry
    f = potential_history(hist)
    near = geom.distance_field(geom.initial_state(), center) <= math.pi / 2
    k = len(hist) // 2
    tau = float(hist.tau[k])
    P = harnack_P(hist.state(k), f[k], tau)
    oracle = torus_kernel_harnack(geom, hist.state(k), center, tau)
    assert np.max(np.abs(P - oracle)[near]) < 5 * geom.h**2
    # near the centre the torus kernel is Euclidean to exponential accuracy
    j = np.unravel_index(np.argmin(geom.distance_field(geom.initial_state(), center)), geom.shape)
    assert oracle[j] == pytest.approx(euclidean_kernel_harnack(2, 0.0, tau), rel=1e-10)


def test_harnack_sign_flat(flat_kernel_run):
    _, hist, _ = flat_kernel_run
    rep = check_harnack_sign(hist, tol=1e-3)
    assert rep.meta["asserted"]
    assert rep.max <= 1e-3


def test_harnack_sign_sphere(sphere_gauss_run):
    _, hist = sphere_gauss_run
    rep = check_harnack_sign(hist, tol=1e-3)
    assert rep.meta["asserted"]
    assert rep.max <= 0.0


def test_liyau_form_equals_P(flat_kernel_run):
    _, hist, _ = flat_kernel_run
    f = potential_history(hist)
    k = len(hist) // 2
    P = harnack_P(hist.state(k), f[k], float(hist.tau[k]))
    # equal up to the time-stencil error of the compact w equation
    assert np.max(np.abs(liyau_form(hist, k) - P)) < 1e-5 * np.max(np.abs(P))


def test_pinching_gap_vanishes_for_einstein_constant_data():
    geom = build_geometry(RoundSphere(n=3, size=32))
    m = geom.state(0.7)
    f = np.full(geom.shape, 0.3)
    # Ric + Hess f - g/(2 tau) is proportional to g for every tau
    for tau in (0.05, 0.3, 1.0):
        assert np.max(np.abs(pinching_gap(m, f, tau))) < 1e-10
        assert np.max(np.abs(pinching_identity_residual(m, f, tau))) < 1e-10


def test_pinching_gap_nonnegative(sphere_gauss_run):
    traj, hist = sphere_gauss_run
    f = potential_history(hist)
    for k in range(20, len(hist) - 1, 10):
        assert np.min(pinching_gap(hist.state(k), f[k], float(hist.tau[k]))) > -1e-9


def test_params_validation():
    with pytest.raises(ValueError):
        IntegratedHarnackParams(0.0, 1.0)
    with pytest.raises(ValueError):
        IntegratedHarnackParams(1.0, -1.0)


@pytest.fixture(scope="module")
def forward_kernel(flat32):
    times = 0.05 + 0.0025 * np.arange(101)
    return forward_heat_kernel_history(flat32, (math.pi, math.pi), times)


def test_measured_beta_near_euclidean_value(forward_kernel):
    # Euclidean kernel: t(|grad f|^2 - f_t) = n/2 exactly
    assert measure_beta(forward_kernel, 1.0) == pytest.approx(1.0, abs=0.5)


def test_integrated_harnack_margins(flat32, forward_kernel):
    beta = measure_beta(forward_kernel, 1.0)
    pairs = random_pairs(flat32, forward_kernel.times, 10, seed=1, min_index=1, max_index=99)
    rep = integrated_harnack_check(forward_kernel, IntegratedHarnackParams(1.0, beta), pairs)
    assert rep.min >= 0.0
    # the printed direction fails for well-separated times
    assert min(rep.columns["margin_reversed"]) < 0.0


def test_integrated_harnack_hypothesis_enforced(flat32, forward_kernel):
    pairs = random_pairs(flat32, forward_kernel.times, 2, seed=1, min_index=1, max_index=99)
    with pytest.raises(HypothesisError):
        integrated_harnack_check(forward_kernel, IntegratedHarnackParams(1.0, 0.1), pairs)


def test_constant_solution_ratio_margin_flat(flat32):
    traj = evolve_ricci(flat32, 0.3, 0.0025)
    w1 = terminal_profile(traj, 0.25, "constant", value=3.0)
    hist = solve_conjugate(traj, w1, 0.25)
    x = flat32.node_point((5, 7))
    y = flat32.node_point((9, 12))
    pairs = [(x, 20, x, 60), (x, 30, y, 90)]
    rep = harnack_ratio_check(traj, hist, pairs)
    n = flat32.n
    for (x1, k1, x2, k2), margin, theta in zip(pairs, rep.values, rep.columns["theta"]):
        expected = n * math.log(hist.tau[k1] / hist.tau[k2]) + 0.5 * theta
        assert margin == pytest.approx(expected, abs=1e-9)
    assert rep.values[0] == pytest.approx(n * math.log(hist.tau[20] / hist.tau[60]), abs=1e-9)


def test_ratio_margins_sphere(sphere_gauss_run):
    traj, hist = sphere_gauss_run
    pairs = random_pairs(traj.geometry, hist.times, 15, seed=4, min_index=2, max_index=len(hist) - 11)
    rep = harnack_ratio_check(traj, hist, pairs, tol=1e-3)
    assert rep.meta["asserted"]
    assert rep.min >= -1e-3
    assert min(rep.columns["margin_integral"]) >= -1e-3


def test_random_pairs_deterministic(flat32):
    times = np.linspace(0, 1, 50)
    a = random_pairs(flat32, times, 20, seed=9)
    b = random_pairs(flat32, times, 20, seed=9)
    assert a == b
    assert all(k1 < k2 for _, k1, _, k2 in a)
    assert not any(flat32.near_cut_locus(x2, x1) for x1, _, x2, _ in a)
