"""
Command-line entry point and experiment orchestration.

Subcommands: simulate, verify-identities, harnack, ratio, localize,
calibrate, report. ``report`` runs every check selected in the config;
the check subcommands run one check each. Exit status is 0 iff every
asserted check passed.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .calibration import (
    CalibrationError,
    calibrate_tolerances,
    constant_record,
    residual_region,
    residual_suite,
    save_record,
    tolerance,
)
from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .conjugate_heat import mass_history, potential_history, solve_conjugate, terminal_profile
from .geometry import FlatTorusGrid, SphereGrid, build_geometry
from .harnack import (
    IntegratedHarnackParams,
    check_harnack_sign,
    forward_heat_kernel_history,
    harnack_P,
    harnack_ratio_check,
    integrated_harnack_check,
    measure_beta,
    random_pairs,
)
from .localization import (
    LocalizationParams,
    build_cutoff,
    distance_dt_residual,
    laplacian_comparison,
    localized_bound_check,
    quadratic_root_bounds,
    quadratic_roots,
    sphere_distance_laplacian,
)
from .oracles import torus_kernel_harnack
from .paths import theta_action
from .ricci_flow import evolve_ricci

RESIDUAL_NAMES = (
    "metric_inverse",
    "volume_element",
    "scalar_curvature",
    "laplacian",
    "f_equation",
    "w_equation",
    "lap_f",
    "grad_sq",
    "bochner",
    "p_evolution",
    "liyau",
    "pinching_gap",
    "pinching_identity",
    "mass_drift",
    "conjugacy",
)
MASS_FACTOR = 5.0
P_ORACLE_FACTOR = 5.0
THETA_REL = 0.01
COMPARISON_TOL = 1e-6
DISTANCE_DT_COEF = 100.0
ROOT_TRIPLES = 10_000
LEMMA_PAIRS = 40


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float | None
    status: str  # pass | fail | report | skip
    group: str
    note: str = ""

    @property
    def asserted(self) -> bool:
        return self.status in ("pass", "fail")


@dataclass
class RunReport:
    config: dict
    grid: dict
    checks: list = field(default_factory=list)
    wall_clock: float = 0.0
    calibration_hash: str = ""
    artifacts: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not any(c.status == "fail" for c in self.checks)

    def add(self, name, value, tol, group, sense="le", asserted=True, note=""):
        value = float(value)
        if not asserted:
            status = "report"
        elif sense == "le":
            status = "pass" if value <= tol else "fail"
        else:
            status = "pass" if value >= -tol else "fail"
        self.checks.append(CheckResult(name, value, None if tol is None else float(tol), status, group, note))

    def skip(self, name, group, note):
        self.checks.append(CheckResult(name, math.nan, None, "skip", group, note))

    def summary_lines(self) -> list:
        lines = [f"ricciharnack {__version__}", f"overall: {'PASS' if self.passed else 'FAIL'}"]
        lines.append("grid: " + ", ".join(f"{k}={v}" for k, v in self.grid.items()))
        if self.calibration_hash:
            lines.append(f"tolerance record: {self.calibration_hash}")
        lines.append(f"wall clock: {self.wall_clock:.2f} s")
        for c in self.checks:
            tol = "" if c.tol is None else f" tol={c.tol:.3e}"
            note = f"  [{c.note}]" if c.note else ""
            lines.append(f"{c.status.upper():6s} {c.group}/{c.name}: {c.value:.6e}{tol}{note}")
        return lines

    def write_checks_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "name", "status", "value", "tol", "note"])
            for c in self.checks:
                w.writerow([c.group, c.name, c.status, repr(c.value), "" if c.tol is None else repr(c.tol), c.note])


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------


class _Context:
    """Geometry, trajectory and history built once per run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.geom = build_geometry(cfg.geometry_spec())
        self.traj = evolve_ricci(self.geom, cfg.T, cfg.dt)
        self.center = cfg.default_center()
        w1 = terminal_profile(
            self.traj, cfg.t1, cfg.profile, center=self.center, amplitude=cfg.amplitude, value=cfg.value
        )
        self.hist = solve_conjugate(self.traj, w1, cfg.t1, 0.0)
        self.region = residual_region(self.geom, self.traj, self.center, cfg.ball_radius())
        self.h = self.geom.h
        self.min_R = min(float(np.min(self.geom.scalar_curvature(m))) for m in self.traj.states())


def _tol(record, name, ctx):
    return tolerance(record, name, ctx.h, ctx.cfg.dt)


def _check_identities(ctx, record, report, out):
    suite = residual_suite(ctx.traj, ctx.hist, ctx.region, ctx.cfg.seed)
    with open(os.path.join(out, "identities.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "max_residual", "term_scale", "tol"])
        for name in RESIDUAL_NAMES:
            val, scale = suite[name]
            tol = _tol(record, name, ctx) * (MASS_FACTOR if name == "mass_drift" else 1.0)
            w.writerow([name, repr(val), repr(scale), repr(tol)])
            report.add(name, val, tol, "identities")
    from .harnack import p_evolution_residual

    printed = p_evolution_residual(ctx.traj, ctx.hist, region=ctx.region).max("p_evolution_as_printed")
    report.add("p_evolution_as_printed", printed, None, "identities", asserted=False, note="extra 4n/tau^2 term")
    if isinstance(ctx.geom, SphereGrid):
        r2 = np.array(ctx.traj.params, dtype=float)
        from .ricci_flow import time_derivative

        R = ctx.geom.n * (ctx.geom.n - 1) / r2
        dR = time_derivative(R, ctx.cfg.dt, order=4)[2:-2]
        res = float(np.max(np.abs(dR - 2.0 * R[2:-2] ** 2 / ctx.geom.n)))
        report.add("sphere_dR_dt_2R2_over_n", res, 1e-6, "identities")
    if ctx.cfg.profile == "heat_kernel":
        mass = mass_history(ctx.hist)
        report.add("kernel_mass_minus_one", float(np.max(np.abs(mass - 1.0))), _tol(record, "mass_drift", ctx), "identities")


def _check_harnack(ctx, record, report, out):
    cfg = ctx.cfg
    tol_p = _tol(record, "f_equation", ctx)
    nonneg = ctx.min_R >= -tol_p
    sign = check_harnack_sign(ctx.hist, tol=tol_p)
    sign.write_csv(os.path.join(out, "harnack_P.csv"))
    report.add(
        "max_P", sign.max, tol_p, "harnack", asserted=nonneg,
        note="" if nonneg else f"mixed curvature probe, min R = {ctx.min_R:.3e}",
    )
    if isinstance(ctx.geom, FlatTorusGrid) and cfg.profile == "heat_kernel":
        f = potential_history(ctx.hist)
        err = 0.0
        for k in np.flatnonzero(ctx.hist.tau >= 10 * cfg.dt):
            m = ctx.hist.state(k)
            tau = float(ctx.hist.tau[k])
            diff = harnack_P(m, f[k], tau) - torus_kernel_harnack(ctx.geom, m, ctx.center, tau)
            err = max(err, float(np.max(np.abs(diff)[ctx.region])))
        report.add("P_vs_kernel_oracle", err, P_ORACLE_FACTOR * ctx.h**2, "harnack")
    else:
        report.skip("P_vs_kernel_oracle", "harnack", "needs flat torus with heat_kernel terminal data")
    if isinstance(ctx.geom, FlatTorusGrid):
        _lemma_integrated(ctx, record, report, out)
    else:
        report.skip("integrated_harnack", "harnack", "forward heat oracle needs a flat torus")
        report.skip("theta_static", "harnack", "closed form needs a static flat metric")


def _lemma_integrated(ctx, record, report, out):
    cfg = ctx.cfg
    geom = ctx.geom
    t_start = max(cfg.tau1, 10 * cfg.dt)
    times = t_start + cfg.dt * np.arange(int(round((cfg.T - t_start) / cfg.dt)) + 1)
    u = forward_heat_kernel_history(geom, ctx.center, times)
    beta = measure_beta(u, alpha=1.0)
    params = IntegratedHarnackParams(1.0, beta)
    rng_pairs = random_pairs(geom, times, min(cfg.pairs, LEMMA_PAIRS), cfg.seed + 1, min_index=1, max_index=len(times) - 2)
    pairs = [(x1, k1, x2, k2) for x1, k1, x2, k2 in rng_pairs]
    tol = _tol(record, "f_equation", ctx)
    rep = integrated_harnack_check(u, params, pairs, tol=tol)
    rep.write_csv(os.path.join(out, "integrated_harnack.csv"))
    report.add("integrated_harnack", rep.min, tol, "harnack", sense="ge", note=f"alpha=1, beta={beta:.6g}")
    report.add(
        "integrated_harnack_printed_direction", float(np.min(rep.columns["margin_reversed"])), None, "harnack",
        asserted=False, note="roles of the two points exchanged, exponent alpha/beta",
    )
    m = geom.initial_state()
    worst = 0.0
    for x1, k1, x2, k2 in pairs[:10]:
        t1, t2 = float(times[k1]), float(times[k2])
        d = geom.distance(m, x1, x2)
        val = theta_action(lambda t: m, x1, t1, x2, t2).value
        exact = d * d / (t2 - t1)
        worst = max(worst, abs(val - exact) / max(exact, 1e-300) if exact > 0 else abs(val))
    report.add("theta_static", worst, THETA_REL, "harnack", note="relative error vs d^2/(t2-t1)")


def _check_ratio(ctx, record, report, out):
    cfg = ctx.cfg
    hist = ctx.hist
    tol = _tol(record, "f_equation", ctx)
    ok = np.flatnonzero(hist.tau >= 10 * cfg.dt)
    pairs = random_pairs(ctx.geom, hist.times, cfg.pairs, cfg.seed, min_index=int(ok[0]), max_index=int(ok[-1]))
    rep = harnack_ratio_check(ctx.traj, hist, pairs, tol=tol)
    rep.write_csv(os.path.join(out, "harnack_ratio.csv"))
    asserted = bool(rep.meta["asserted"])
    note = "" if asserted else f"mixed curvature probe, min R = {rep.meta['min_R']:.3e}"
    report.add("ratio_margin_sup_R", rep.min, tol, "ratio", sense="ge", asserted=asserted, note=note)
    report.add(
        "ratio_margin_integral_R", float(np.min(rep.columns["margin_integral"])), tol, "ratio", sense="ge",
        asserted=asserted, note=note,
    )


def _check_localize(ctx, record, report, out):
    cfg = ctx.cfg
    geom = ctx.geom
    rho = cfg.localization_rho()
    cut = build_cutoff(rho)
    cut2 = build_cutoff(rho, samples=2 * cut.samples)
    cut.write_csv(os.path.join(out, "cutoff.csv"))
    report.add("cutoff_certified", 0.0 if cut.certified else 1.0, 0.0, "localize")
    drift = max(abs(cut2.C1 / cut.C1 - 1.0), abs(cut2.C2 / cut.C2 - 1.0))
    report.add("cutoff_constants_stability", drift, 0.01, "localize")

    rng = np.random.default_rng(cfg.seed)
    bad = 0
    for p, q, r in zip(rng.uniform(1e-3, 10, ROOT_TRIPLES), rng.uniform(1e-3, 10, ROOT_TRIPLES), -rng.uniform(1e-3, 10, ROOT_TRIPLES)):
        lo, hi = quadratic_root_bounds(p, q, r)
        a, b = quadratic_roots(p, q, r)
        bad += not (lo <= a and b <= hi)
    report.add("quadratic_root_containment_failures", bad, 0, "localize")

    if isinstance(geom, SphereGrid):
        m = geom.initial_state()
        r = math.sqrt(m.params)
        d = np.linspace(0.2, math.pi - 0.2, 200) * r
        lap = sphere_distance_laplacian(m, (0.0,), d / r)
        cmp = np.array([laplacian_comparison(1.0 / m.params, v, geom.n) for v in d])
        report.add("laplacian_comparison_sphere", float(np.max(np.abs(lap - cmp))), COMPARISON_TOL, "localize")
    else:
        report.skip("laplacian_comparison_sphere", "localize", "model-sphere equality case")

    pts = _distance_points(geom, ctx.center)
    node = len(ctx.traj) // 2
    res = max(abs(distance_dt_residual(ctx.traj, x, ctx.center, node=node)) for x in pts)
    if isinstance(geom, FlatTorusGrid):
        report.add("distance_dt", res, 0.0, "localize")
    elif isinstance(geom, SphereGrid):
        report.add("distance_dt", res, DISTANCE_DT_COEF * cfg.dt**2, "localize")
    else:
        report.add("distance_dt", res, None, "localize", asserted=False, note="graph distance")

    params = LocalizationParams(cfg.localization_center(), rho, cfg.localization_delta(), geom.n)
    rep = localized_bound_check(ctx.traj, ctx.hist, params, cutoff=cut)
    rep.write_csv(os.path.join(out, "localized_bound.csv"))
    report.add("localized_margin", rep.min, 0.0, "localize", sense="ge", note=f"K={rep.meta['K']:.3e}, C={rep.meta['C']:.6g}")


def _distance_points(geom, center):
    if isinstance(geom, SphereGrid):
        c = float(np.ravel(center)[0])
        cands = [(float(t),) for t in geom.theta[:: max(1, len(geom.theta) // 8)]]
        return [x for x in cands if not geom.near_cut_locus(x, center) and abs(x[0] - c) > 2 * geom.h]
    out = []
    for frac in (0.1, 0.2, 0.3):
        x = tuple(float(c + frac * L) % L for c, L in zip(center, geom.lengths))
        x = geom.node_point(geom.nearest_index(x))
        if not geom.near_cut_locus(x, center):
            out.append(x)
    return out


def _record(cfg, out):
    if cfg.tolerance == "auto":
        record = calibrate_tolerances(cfg)
    else:
        record = constant_record(cfg.tolerance, RESIDUAL_NAMES)
    save_record(record, os.path.join(out, "calibration.json"))
    return record


def run_experiment(cfg: ExperimentConfig, out: str | None = None, checks=None, record=None) -> RunReport:
    """Build geometry, flow and solution, run the selected checks, write artifacts."""
    start = time.perf_counter()
    out = cfg.output_dir(out)
    os.makedirs(out, exist_ok=True)
    selected = tuple(checks) if checks is not None else cfg.checks
    if record is None:
        record = _record(cfg, out)
    ctx = _Context(cfg)
    report = RunReport(
        config=cfg.echo(),
        grid={"family": ctx.geom.family, "shape": ctx.geom.shape, "h": ctx.h, "dt": cfg.dt, "T": cfg.T},
        calibration_hash=record.get("hash", ""),
    )
    runners = {
        "identities": _check_identities,
        "harnack": _check_harnack,
        "ratio": _check_ratio,
        "localize": _check_localize,
    }
    for name in selected:
        runners[name](ctx, record, report, out)
    report.wall_clock = time.perf_counter() - start
    report.write_checks_csv(os.path.join(out, "checks.csv"))
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(report.summary_lines()) + "\n")
    report.artifacts = sorted(os.listdir(out))
    return report


def simulate(cfg: ExperimentConfig, out: str | None = None) -> dict:
    out = cfg.output_dir(out)
    os.makedirs(out, exist_ok=True)
    geom = build_geometry(cfg.geometry_spec())
    traj = evolve_ricci(geom, cfg.T, cfg.dt)
    w1 = terminal_profile(traj, cfg.t1, cfg.profile, center=cfg.default_center(), amplitude=cfg.amplitude, value=cfg.value)
    hist = solve_conjugate(traj, w1, cfg.t1, 0.0)
    traj.write_csv(os.path.join(out, "trajectory.csv"))
    hist.write_csv(os.path.join(out, "history.csv"))
    lines = [
        f"family={geom.family} grid={geom.shape} T={cfg.T} dt={cfg.dt}",
        f"history nodes={len(hist)} t1={cfg.t1} tau1={cfg.tau1}",
        f"volume(0)={traj.volumes()[0]!r} volume(T)={traj.volumes()[-1]!r}",
    ]
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return {"trajectory": traj, "history": hist, "lines": lines}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

SUBCOMMANDS = {
    "verify-identities": ("identities",),
    "harnack": ("harnack",),
    "ratio": ("ratio",),
    "localize": ("localize",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ricciharnack", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "verify-identities", "harnack", "ratio", "localize", "calibrate", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML experiment file (defaults are used when omitted)")
        p.add_argument("--out", help="output directory (default: $RICCIHARNACK_OUT or ./ricciharnack-out)")
        p.add_argument("--seed", type=int, help="seed for pair sampling and random fields")
        p.add_argument("--resolution", type=int, help="grid nodes per axis")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else from_dict({})
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.resolution is not None:
        cfg = cfg.with_resolution(args.resolution)
    from .config import validate

    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "simulate":
            res = simulate(cfg, args.out)
            print("\n".join(res["lines"]))
            return 0
        if args.command == "calibrate":
            out = cfg.output_dir(args.out)
            os.makedirs(out, exist_ok=True)
            record = calibrate_tolerances(cfg)
            save_record(record, os.path.join(out, "calibration.json"))
            for name, entry in record["entries"].items():
                orders = ", ".join(f"{p}={'floor' if o is None else f'{o:.2f}'}" for p, o in entry["orders"].items())
                print(f"{name}: A={entry['A']:.4e} ({orders})")
            print(f"record hash {record['hash']}")
            return 0
        checks = SUBCOMMANDS.get(args.command)
        report = run_experiment(cfg, args.out, checks=checks)
        print("\n".join(report.summary_lines()))
        return 0 if report.passed else 1
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"calibration refused: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
