import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricciharnack.calibration import probe_field
from ricciharnack.geometry import ConformalTorus2D, FlatTorus, RoundSphere, build_geometry
from ricciharnack.ricci_flow import (
    FlowError,
    evolution_identity_residuals,
    evolve_ricci,
    exact_sphere_trajectory,
    extinction_time,
    time_derivative,
    uniform_grid,
)

from conftest import conformal_phi0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_sphere_radius_closed_form(n):
    geom = build_geometry(RoundSphere(n=n, r0=1.0, size=16))
    T = 0.8 * extinction_time(n, 1.0)
    traj = evolve_ricci(geom, T, 1e-3)
    exact = exact_sphere_trajectory(n, 1.0, T, 1e-3, size=16)
    np.testing.assert_allclose(traj.params, exact.params, rtol=1e-12)


def test_extinction_time_values():
    assert extinction_time(2, 1.0) == pytest.approx(0.5)
    assert extinction_time(3, 2.0) == pytest.approx(1.0)


def test_sphere_guard_rejects_long_horizon():
    geom = build_geometry(RoundSphere(n=2, size=16))
    with pytest.raises(FlowError):
        evolve_ricci(geom, 0.49, 1e-3)


def test_uniform_grid_hits_horizon():
    times, dt = uniform_grid(0.3, 0.007)
    assert times[-1] == pytest.approx(0.3)
    assert dt <= 0.007
    np.testing.assert_allclose(np.diff(times), dt)


def test_flat_torus_is_static(flat32):
    traj = evolve_ricci(flat32, 0.1, 0.01)
    assert all(np.array_equal(p, traj.params[0]) for p in traj.params)


def test_conformal_volume_conserved(conformal32):
    # 2-D flow: dV/dt = -int R dmu = 0 on the torus
    traj = evolve_ricci(conformal32, 0.1, 1e-3)
    vols = traj.volumes()
    assert np.max(np.abs(vols - vols[0])) / vols[0] < 1e-10


def test_conformal_flow_smooths_factor(conformal32):
    traj = evolve_ricci(conformal32, 0.2, 1e-3)
    spread = [float(np.ptp(p)) for p in traj.params]
    assert spread[-1] < spread[0]


@given(c=st.lists(st.floats(-2, 2), min_size=5, max_size=5))
@settings(max_examples=30, deadline=None)
def test_fourth_order_stencil_exact_on_quartics(c):
    t = np.linspace(0.0, 1.0, 21)
    dt = t[1] - t[0]
    v = sum(ck * t**k for k, ck in enumerate(c))
    dv = sum(k * ck * t ** (k - 1) for k, ck in enumerate(c) if k)
    approx = time_derivative(v, dt, order=4)
    np.testing.assert_allclose(approx[2:-2], dv[2:-2], atol=1e-9)


def test_sphere_identities_hold_to_time_error():
    geom = build_geometry(RoundSphere(n=3, size=64))
    traj = evolve_ricci(geom, 0.1, 1e-3)
    rep = evolution_identity_residuals(traj, probe_field(geom))
    assert rep.max("metric_inverse") < 1e-6
    assert rep.max("volume_element") < 1e-6


def test_conformal_identities_converge():
    res = []
    for N in (32, 64):
        geom = build_geometry(ConformalTorus2D(sizes=(N, N), phi0=conformal_phi0))
        traj = evolve_ricci(geom, 0.05, 5e-4)
        res.append(evolution_identity_residuals(traj, probe_field(geom)))
    for name in ("metric_inverse", "volume_element", "scalar_curvature", "laplacian"):
        assert math.log2(res[0].max(name) / res[1].max(name)) > 1.8, name
