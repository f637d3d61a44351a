"""
Residual suites and tolerance calibration.

Every "approximately zero" check uses tol = A * (h^2 + dt^2). A is fitted
per residual from two runs, (N/2, dt) and (N, dt/2). The pair refines h^2
and dt^2 by the same factor, so it cannot separate spatial from temporal
error; the target run (N, dt) shares h with one run and dt with the other,
and A is a safety multiple of the larger observed residual divided by the
target h^2 + dt^2. A residual whose observed
order between the runs is below 1.5 aborts the calibration, unless both
runs sit at round-off level, in which case A is floored.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .conjugate_heat import (
    conjugacy_residual,
    f_evolution_residual,
    mass_history,
    potential_history,
    select_nodes,
    solve_conjugate,
    terminal_profile,
)
from .geometry import SphereGrid, build_geometry
from .harnack import (
    liyau_form,
    harnack_P,
    lemma_identity_residuals,
    p_evolution_residual,
    pinching_gap,
    pinching_identity_residual,
)
from .ricci_flow import evolution_identity_residuals, evolve_ricci

SAFETY = 4.0
MIN_ORDER = 1.5
NOISE = 1e-9
A_FLOOR = 1e4 * np.finfo(float).eps
POLAR_CAP = 0.2


class CalibrationError(RuntimeError):
    pass


def probe_field(geom) -> np.ndarray:
    if isinstance(geom, SphereGrid):
        return np.cos(geom.theta) + 0.5 * np.cos(2.0 * geom.theta)
    return np.prod([np.cos(2.0 * math.pi * c / L) for c, L in zip(geom.coords, geom.lengths)], axis=0) + np.sin(
        2.0 * math.pi * geom.coords[0] / geom.lengths[0]
    )


def trig_field_history(geom, times, rng) -> np.ndarray:
    """Smooth space-time field a0 + sum a_j (1 + c_j t) mode_j(x) with seeded coefficients."""
    times = np.asarray(times, dtype=float)
    if isinstance(geom, SphereGrid):
        modes = [np.cos(j * geom.theta) for j in (1, 2, 3)]
    else:
        modes = []
        for j in (1, 2):
            arg = sum(rng.integers(-2, 3) * 2.0 * math.pi * c / L for c, L in zip(geom.coords, geom.lengths))
            modes.append(np.cos(arg + j) if np.any(arg) else np.cos(j * 2.0 * math.pi * geom.coords[0] / geom.lengths[0]))
    a = rng.uniform(-0.3, 0.3, size=len(modes))
    c = rng.uniform(-1.0, 1.0, size=len(modes))
    base = rng.uniform(0.5, 1.5)
    field = np.full((len(times),) + geom.shape, base)
    for aj, cj, mode in zip(a, c, modes):
        field += aj * (1.0 + cj * times).reshape((-1,) + (1,) * len(geom.shape)) * mode
    return field


def residual_region(geom, traj, center, radius):
    """Mask of nodes used for residual norms: a ball around ``center`` (optional),
    with 0.2 rad polar caps removed on the sphere."""
    mask = np.ones(geom.shape, dtype=bool)
    if radius is not None:
        mask &= geom.distance_field(traj.state(0), center) <= radius
    if isinstance(geom, SphereGrid):
        mask &= (geom.theta >= POLAR_CAP) & (geom.theta <= math.pi - POLAR_CAP)
    return mask


def residual_suite(traj, hist, region=None, seed: int = 0) -> dict:
    """Max residual and term scale of every identity check, by name."""
    geom = traj.geometry
    out = {}
    flow = evolution_identity_residuals(traj, probe_field(geom))
    for name in ("metric_inverse", "volume_element", "scalar_curvature", "laplacian"):
        out[name] = (flow.max(name), flow.scales.get(name, 1.0))
    for rep in (
        f_evolution_residual(hist, region=region),
        lemma_identity_residuals(traj, hist, region=region),
        p_evolution_residual(traj, hist, region=region),
    ):
        for name in rep.names():
            if name.endswith("as_printed"):
                continue
            out[name] = (rep.max(name), rep.scales.get(name, 1.0))
    mask = np.ones(geom.shape, dtype=bool) if region is None else region
    f = potential_history(hist)
    ly, gap, ident, pscale = 0.0, 0.0, 0.0, 0.0
    for k in select_nodes(hist):
        m = hist.state(k)
        tau = float(hist.tau[k])
        P = harnack_P(m, f[k], tau)
        ly = max(ly, float(np.max(np.abs(liyau_form(hist, k) - P)[mask])))
        gap = max(gap, float(np.max(-pinching_gap(m, f[k], tau)[mask])))
        ident = max(ident, float(np.max(np.abs(pinching_identity_residual(m, f[k], tau)))))
        pscale = max(pscale, float(np.max(np.abs(P))))
    out["liyau"] = (ly, pscale)
    out["pinching_gap"] = (max(gap, 0.0), pscale**2)
    out["pinching_identity"] = (ident, pscale)
    mass = mass_history(hist)
    out["mass_drift"] = (float(np.max(np.abs(mass - mass[-1])) / mass[-1]), 1.0)
    rng = np.random.default_rng(seed)
    u = trig_field_history(geom, traj.times, rng)
    v = trig_field_history(geom, traj.times, rng)
    out["conjugacy"] = (conjugacy_residual(traj, u, v), float(np.max(np.abs(u * v))) * traj.volumes()[0])
    return out


def run_suite(spec, T, dt, profile, tau1, center, radius, amplitude=0.5, value=1.0, seed=0):
    geom = build_geometry(spec)
    traj = evolve_ricci(geom, T, dt)
    t1 = T - tau1
    w1 = terminal_profile(traj, t1, profile, center=center, amplitude=amplitude, value=value)
    hist = solve_conjugate(traj, w1, t1, 0.0)
    region = residual_region(geom, traj, center, radius)
    return geom, traj, hist, residual_suite(traj, hist, region, seed)


def fit(coarse: dict, fine: dict, hc, dtc, hf, dtf) -> dict:
    """Per-residual A, observed order and round-off flag (target grid: hf, dtc)."""
    et = hf**2 + dtc**2
    out = {}
    for name, (rc, scale) in coarse.items():
        rf, _ = fine[name]
        noise = NOISE * max(1.0, scale)
        floored = bool(rc <= noise and rf <= noise)
        if floored:
            A = max(A_FLOOR, 100.0 * max(rc, rf) / et)
            order = None
        else:
            A = SAFETY * max(rc, rf) / et
            order = math.log2(rc / rf) if rf > 0 else math.inf
        out[name] = {"A": float(A), "order": order, "coarse": float(rc), "fine": float(rf), "floored": floored}
    return out


def calibrate_tolerances(cfg, suites=None) -> dict:
    """Calibration record for the configuration's geometry.

    ``suites`` defaults to the trigonometric suite plus the configured
    terminal profile when it is not already trigonometric or constant.
    """
    N = cfg.geometry.resolution
    coarse_N = max(8, N // 2)
    if suites is None:
        suites = ["trig"] + ([cfg.profile] if cfg.profile not in ("trig", "constant") else [])
    per_suite = {}
    for profile in suites:
        radius = None if profile in ("trig", "constant") else cfg.ball_radius()
        runs = []
        for res, dt in ((coarse_N, cfg.dt), (N, 0.5 * cfg.dt)):
            geom, _, _, vals = run_suite(
                cfg.geometry_spec(res), cfg.T, dt, profile, cfg.tau1, cfg.default_center(), radius,
                cfg.amplitude, cfg.value, cfg.seed,
            )
            runs.append((geom.h, dt, vals))
        (hc, dtc, vc), (hf, dtf, vf) = runs
        per_suite[profile] = fit(vc, vf, hc, dtc, hf, dtf)
    names = list(next(iter(per_suite.values())))
    entries = {}
    bad = []
    for name in names:
        A = max(s[name]["A"] for s in per_suite.values())
        orders = {p: s[name]["order"] for p, s in per_suite.items()}
        for p, o in orders.items():
            if o is not None and o < MIN_ORDER:
                bad.append(f"{name} ({p}): order {o:.3f}")
        entries[name] = {"A": A, "orders": orders, "detail": per_suite_detail(per_suite, name)}
    record = {
        "family": cfg.geometry.family,
        "resolutions": [coarse_N, N],
        "dts": [cfg.dt, 0.5 * cfg.dt],
        "suites": list(suites),
        "safety": SAFETY,
        "entries": entries,
    }
    record["hash"] = record_hash(record)
    if bad:
        raise CalibrationError("convergence order below 1.5 (discretization bug?): " + "; ".join(bad))
    return record


def per_suite_detail(per_suite, name):
    return {p: {k: s[name][k] for k in ("coarse", "fine", "floored")} for p, s in per_suite.items()}


def record_hash(record: dict) -> str:
    body = {k: v for k, v in record.items() if k != "hash"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, default=repr).encode()).hexdigest()[:16]


def tolerance(record: dict, name: str, h: float, dt: float) -> float:
    return record["entries"][name]["A"] * (h**2 + dt**2)


def constant_record(A: float, names) -> dict:
    """Record for a user-fixed A (no calibration runs)."""
    record = {"family": "fixed", "entries": {n: {"A": float(A), "orders": {}, "detail": {}} for n in names}}
    record["hash"] = record_hash(record)
    return record


def save_record(record: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, default=repr)
        fh.write("\n")
