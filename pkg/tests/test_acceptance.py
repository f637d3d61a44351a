"""Acceptance criteria 1-9, one summary line each.

The lines are printed by each test and collected into the terminal summary
(section "acceptance criteria") by conftest.py.
"""

import filecmp
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, conformal_phi0
from ricciharnack.calibration import probe_field, run_suite
from ricciharnack.cli import run_experiment
from ricciharnack.config import from_dict
from ricciharnack.conjugate_heat import solve_conjugate, terminal_profile
from ricciharnack.geometry import ConformalTorus2D, FlatTorus, RoundSphere, build_geometry
from ricciharnack.harnack import harnack_ratio_check, pinching_gap, random_pairs
from ricciharnack.localization import quadratic_root_bounds, quadratic_roots
from ricciharnack.ricci_flow import evolution_identity_residuals, evolve_ricci, extinction_time

FLAT_CFG = {"geometry": {"family": "flat_torus", "resolution": 64}, "flow": {"T": 0.3, "dt": 0.0025}}
SPHERE_CFG = {
    "geometry": {"family": "sphere", "n": 2, "resolution": 128},
    "flow": {"T": 0.2, "dt": 0.001},
}


def record(number, ok, text):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def _check(report, group, name):
    found = [c for c in report.checks if c.group == group and c.name == name]
    assert len(found) == 1, f"{group}/{name} appears {len(found)} times"
    return found[0]


@pytest.fixture(scope="module")
def flat_runs(tmp_path_factory):
    cfg = from_dict(FLAT_CFG)
    out = []
    for tag in ("a", "b"):
        d = tmp_path_factory.mktemp(f"flat_{tag}")
        start = time.perf_counter()
        rep = run_experiment(cfg, str(d))
        out.append((rep, d, time.perf_counter() - start))
    return out


@pytest.fixture(scope="module")
def flat(flat_runs):
    return flat_runs[0][0]


@pytest.fixture(scope="module")
def sphere(tmp_path_factory):
    return run_experiment(from_dict(SPHERE_CFG), str(tmp_path_factory.mktemp("sphere")))


def test_criterion_1_exact_sphere_radius():
    start = time.perf_counter()
    worst = 0.0
    for n in (2, 3):
        geom = build_geometry(RoundSphere(n=n, size=32))
        T = 0.85 * extinction_time(n, 1.0)
        traj = evolve_ricci(geom, T, 1e-4)
        exact = 1.0 - 2.0 * (n - 1) * traj.times
        worst = max(worst, float(np.max(np.abs(np.array(traj.params) / exact - 1.0))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 30
    assert record(1, ok, f"sphere r^2(t) max relative error {worst:.2e} (<= 1e-8), n = 2, 3, dt = 1e-4, {elapsed:.1f} s")


def test_criterion_2_flow_identities(sphere):
    res = []
    for N in (64, 128):
        geom = build_geometry(ConformalTorus2D(sizes=(N, N), phi0=conformal_phi0))
        traj = evolve_ricci(geom, 0.05, 5e-4)
        res.append(evolution_identity_residuals(traj, probe_field(geom)))
    names = ("metric_inverse", "volume_element", "scalar_curvature", "laplacian")
    orders = {k: math.log2(res[0].max(k) / res[1].max(k)) for k in names}
    dR = _check(sphere, "identities", "sphere_dR_dt_2R2_over_n")
    ok = min(orders.values()) >= 1.8 and dR.status == "pass"
    text = ", ".join(f"{k} {v:.2f}" for k, v in orders.items())
    assert record(2, ok, f"conformal 64->128 orders [{text}] (>= 1.8); sphere dR/dt - 2R^2/n = {dR.value:.1e} (<= 1e-6)")


def test_criterion_3_harnack_sign_and_oracle(flat, sphere):
    pf = _check(flat, "harnack", "max_P")
    ps = _check(sphere, "harnack", "max_P")
    orc = _check(flat, "harnack", "P_vs_kernel_oracle")
    ok = all(c.status == "pass" for c in (pf, ps, orc))
    assert record(
        3, ok,
        f"max P flat {pf.value:.2f}, sphere {ps.value:.2f} (<= tol); "
        f"flat kernel |P - oracle| {orc.value:.1e} (<= 5h^2 = {orc.tol:.1e})",
    )


def _refinement(spec_of, center):
    vals = {}
    for N in (64, 128):
        _, _, _, v = run_suite(spec_of(N), 0.2, 1e-3, "trig", 0.05, center, None)
        vals[N] = v
    return {k: vals[64][k][0] / vals[128][k][0] for k in ("f_equation", "lap_f", "grad_sq", "bochner", "p_evolution")}


def test_criterion_4_identities_and_refinement(flat, sphere):
    names = ("p_evolution", "lap_f", "grad_sq", "bochner", "f_equation", "w_equation", "pinching_gap", "pinching_identity")
    statuses = [_check(r, "identities", n).status for r in (flat, sphere) for n in names]
    ratios = _refinement(lambda N: FlatTorus(n=2, sizes=(N, N)), (math.pi, math.pi))
    ratios_s = _refinement(lambda N: RoundSphere(n=2, size=N), (0.0,))
    lo = min(min(ratios.values()), min(ratios_s.values()))
    hi = max(max(ratios.values()), max(ratios_s.values()))
    geom = build_geometry(RoundSphere(n=3, size=32))
    einstein_gap = float(np.max(np.abs(pinching_gap(geom.state(0.6), np.zeros(geom.shape), 0.2))))
    ok = all(s == "pass" for s in statuses) and 3.0 <= lo and hi <= 5.5 and einstein_gap < 1e-10
    assert record(
        4, ok,
        f"{len(statuses)} calibrated residual checks pass; 64->128 ratios in [{lo:.2f}, {hi:.2f}] (~4); "
        f"gap on Einstein data {einstein_gap:.1e}",
    )


def test_criterion_5_conjugacy_and_mass(flat, sphere):
    checks = [
        _check(flat, "identities", "conjugacy"),
        _check(sphere, "identities", "conjugacy"),
        _check(flat, "identities", "mass_drift"),
        _check(sphere, "identities", "mass_drift"),
        _check(flat, "identities", "kernel_mass_minus_one"),
    ]
    ok = all(c.status == "pass" for c in checks)
    assert record(
        5, ok,
        f"conjugacy {checks[0].value:.1e}/{checks[1].value:.1e}, mass drift {checks[2].value:.1e}/{checks[3].value:.1e} "
        f"(<= 5 tol), kernel mass error {checks[4].value:.1e}",
    )


def test_criterion_6_ratio_bound(flat, sphere):
    checks = [_check(r, "ratio", n) for r in (flat, sphere) for n in ("ratio_margin_sup_R", "ratio_margin_integral_R")]
    # constant solution on the flat torus: margin = n log(tau1/tau2) at coincident points
    geom = build_geometry(FlatTorus(n=2, sizes=(32, 32)))
    traj = evolve_ricci(geom, 0.3, 0.0025)
    hist = solve_conjugate(traj, terminal_profile(traj, 0.25, "constant", value=2.0), 0.25)
    pairs = [(x1, k1, x1, k2) for x1, k1, _, k2 in random_pairs(geom, hist.times, 10, seed=11, max_index=len(hist) - 11)]
    rep = harnack_ratio_check(traj, hist, pairs)
    err = max(abs(v - 2 * math.log(hist.tau[k1] / hist.tau[k2])) for v, (_, k1, _, k2) in zip(rep.values, pairs))
    ok = all(c.status == "pass" for c in checks) and err < 1e-9
    assert record(
        6, ok,
        f"100 pairs, min margins flat {checks[0].value:.2f}/{checks[1].value:.2f}, sphere {checks[2].value:.2f}/{checks[3].value:.2f} "
        f"(>= -tol); constant-solution error {err:.1e}",
    )


def test_criterion_7_integrated_harnack(flat):
    lemma = _check(flat, "harnack", "integrated_harnack")
    theta = _check(flat, "harnack", "theta_static")
    ok = lemma.status == "pass" and theta.status == "pass"
    assert record(
        7, ok,
        f"forward kernel, {lemma.note}: min margin {lemma.value:.2f} (>= -tol), hypothesis holds; "
        f"static Theta relative error {theta.value:.1e} (<= 1%)",
    )


def test_criterion_8_localization(flat, sphere):
    names = [
        ("cutoff_certified", flat),
        ("cutoff_constants_stability", flat),
        ("quadratic_root_containment_failures", flat),
        ("laplacian_comparison_sphere", sphere),
        ("localized_margin", flat),
        ("localized_margin", sphere),
    ]
    checks = [_check(r, "localize", n) for n, r in names]
    rng = np.random.default_rng(8)
    bad = 0
    for p, q, r in zip(rng.uniform(1e-3, 10, 10_000), rng.uniform(1e-3, 10, 10_000), -rng.uniform(1e-3, 10, 10_000)):
        lo, hi = quadratic_root_bounds(p, q, r)
        a, b = quadratic_roots(p, q, r)
        bad += not (lo <= a and b <= hi)
    ok = all(c.status == "pass" for c in checks) and bad == 0
    assert record(
        8, ok,
        f"cutoff certified, C1/C2 drift {checks[1].value:.1e}; comparison error {checks[3].value:.1e} (<= 1e-6); "
        f"localized min margin flat {checks[4].value:.1f}, sphere {checks[5].value:.1f}; root containment 1e4/1e4",
    )


def test_criterion_9_runtime_and_determinism(flat_runs):
    (ra, da, ta), (rb, db, tb) = flat_runs
    files = sorted(f for f in os.listdir(da) if f.endswith(".csv"))
    _, mismatch, errors = filecmp.cmpfiles(da, db, files, shallow=False)
    ok = max(ta, tb) <= 120 and not mismatch and not errors and ra.passed and rb.passed and len(files) >= 5
    assert record(
        9, ok,
        f"flat 64^2 'all' run {ta:.1f} s / {tb:.1f} s (<= 120 s), overall {'PASS' if ra.passed else 'FAIL'}; "
        f"{len(files)} CSV files byte-identical" + (f", mismatched: {mismatch + errors}" if mismatch or errors else ""),
    )
