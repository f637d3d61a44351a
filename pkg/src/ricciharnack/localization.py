"""
Cutoff functions, distance comparison inputs, and the localized gradient bound.

The cutoff profile is psi(s) = 1 - S(s - 1) on [1, 2] with the quintic
smoothstep S(x) = 6x^5 - 15x^4 + 10x^3, psi = 1 below and 0 above.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .conjugate_heat import TAU_WINDOW, SolutionHistory
from .geometry import ConformalTorusGrid, FlatTorusGrid, SphereGrid, min_ricci_eigenvalue
from .reports import HarnackReport
from .ricci_flow import MetricTrajectory, time_derivative

CUTOFF_SAMPLES = 100_000
SAMPLE_RANGE = (0.0, 3.0)


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def smoothstep_d1(x):
    x = np.clip(x, 0.0, 1.0)
    return 30.0 * x**2 * (x - 1.0) ** 2


def smoothstep_d2(x):
    x = np.clip(x, 0.0, 1.0)
    return 60.0 * x * (2.0 * x - 1.0) * (x - 1.0)


def psi(s):
    return 1.0 - smoothstep(np.asarray(s, dtype=float) - 1.0)


def psi_d1(s):
    return -smoothstep_d1(np.asarray(s, dtype=float) - 1.0)


def psi_d2(s):
    return -smoothstep_d2(np.asarray(s, dtype=float) - 1.0)


def _ratio(s):
    """|psi'|^2 / psi, continued by 0 where psi vanishes."""
    s = np.asarray(s, dtype=float)
    p = psi(s)
    d = psi_d1(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(p > 0, d * d / np.where(p > 0, p, 1.0), 0.0)
    return out


def _certified_sup(fn, s):
    """Max of fn over the samples, refined by a bounded 1-D search between
    the neighbours of the best sample."""
    vals = fn(s)
    i = int(np.argmax(vals))
    lo, hi = s[max(i - 1, 0)], s[min(i + 1, len(s) - 1)]
    best = float(vals[i])
    if hi > lo:
        res = minimize_scalar(lambda x: -float(fn(np.array([x]))[0]), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        best = max(best, -float(res.fun))
        where = float(res.x) if -res.fun >= vals[i] else float(s[i])
    else:
        where = float(s[i])
    return best, where


@dataclass(frozen=True)
class CutoffProfile:
    """Certified quintic cutoff psi with constants and induced space-time cutoff."""

    rho: float
    C1: float
    C2: float
    samples: int
    argmax_C1: float
    argmax_d2: float
    sup_d1: float
    sup_d2: float
    checks: dict

    @property
    def certified(self) -> bool:
        return all(self.checks.values())

    def psi(self, s):
        return psi(s)

    def phi(self, dist):
        """phi = psi(d / rho); equals 1 where d <= rho and 0 where d >= 2 rho."""
        return psi(np.asarray(dist, dtype=float) / self.rho)

    def write_csv(self, path, stride: int = 100) -> None:
        s = np.linspace(*SAMPLE_RANGE, self.samples)[::stride]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "psi", "dpsi", "d2psi", "ratio"])
            for row in zip(s, psi(s), psi_d1(s), psi_d2(s), _ratio(s)):
                w.writerow([repr(float(v)) for v in row])
            w.writerow([])
            for key in ("rho", "C1", "C2", "samples", "argmax_C1", "argmax_d2", "sup_d1", "sup_d2"):
                w.writerow([f"# {key}", repr(getattr(self, key))])
            for key, ok in self.checks.items():
                w.writerow([f"# check {key}", ok])


def build_cutoff(rho: float, samples: int = CUTOFF_SAMPLES) -> CutoffProfile:
    """Quintic cutoff with C1 = sup |psi'|^2/psi and C2 = max(sup|psi'|, sup|psi''|)."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if samples < 10:
        raise ValueError("need at least 10 samples")
    s = np.linspace(*SAMPLE_RANGE, samples)
    C1, arg1 = _certified_sup(_ratio, s)
    sup_d1, _ = _certified_sup(lambda x: np.abs(psi_d1(x)), s)
    sup_d2, arg2 = _certified_sup(lambda x: np.abs(psi_d2(x)), s)
    C2 = max(sup_d1, sup_d2)
    p, d1, d2 = psi(s), psi_d1(s), psi_d2(s)
    checks = {
        "one_on_unit_interval": bool(np.all(p[s <= 1.0] == 1.0)),
        "zero_beyond_two": bool(np.all(p[s >= 2.0] == 0.0)),
        "nonincreasing": bool(np.all(d1 <= 0.0)),
        "ratio_bounded": bool(np.all(_ratio(s) <= C1)),
        "d2_bounded": bool(np.all(np.abs(d2) <= C2)),
        "range": bool(np.all((p >= 0.0) & (p <= 1.0))),
    }
    return CutoffProfile(float(rho), C1, C2, int(samples), arg1, arg2, sup_d1, sup_d2, checks)


# --------------------------------------------------------------------------
# distance function inputs
# --------------------------------------------------------------------------


def laplacian_comparison(k: float, rho: float, n: int) -> float:
    """Upper bound for the Laplacian of distance at distance rho when Ric >= (n-1) k."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    if k > 0:
        a = math.sqrt(k) * rho
        if a >= math.pi:
            raise ValueError(f"sqrt(k) * rho = {a} is beyond the first conjugate point")
        return (n - 1) * math.sqrt(k) / math.tan(a)
    if k == 0:
        return (n - 1) / rho
    a = math.sqrt(-k)
    return (n - 1) * a / math.tanh(a * rho)


def sphere_distance_laplacian(m, p, theta, step: float = 1e-4) -> np.ndarray:
    """Laplacian of x -> d(x, p) on the sphere at polar angles ``theta``.

    Evaluated from the exact distance function with centered differences of
    step ``step`` in theta, through r^-2 (d'' + (n-1) cot(theta) d').
    """
    geom = m.geometry
    if not isinstance(geom, SphereGrid):
        raise TypeError("needs a sphere metric state")
    theta = np.asarray(theta, dtype=float)
    p = float(np.ravel(p)[0])
    r = math.sqrt(m.params)

    def d(t):
        return r * np.abs(t - p)

    d1 = (d(theta + step) - d(theta - step)) / (2.0 * step)
    d2 = (d(theta + step) - 2.0 * d(theta) + d(theta - step)) / step**2
    return (d2 + (geom.n - 1) * np.cos(theta) / np.sin(theta) * d1) / m.params


def distance_dt_residual(traj: MetricTrajectory, x, p, node: int | None = None) -> float:
    """d/dt dist(x, p, t) + int_gamma Ric(xi, xi) dr at one interior trajectory node.

    The time derivative is the centered difference of the distance at the
    neighbouring nodes.
    """
    geom = traj.geometry
    if geom.near_cut_locus(x, p):
        raise ValueError(f"point {x} is within 3 cells of the cut locus of {p}")
    K = len(traj)
    if node is None:
        node = K // 2
    if not 0 < node < K - 1:
        raise ValueError("distance_dt_residual needs an interior node")
    dt = traj.dt
    lhs = (geom.distance(traj.state(node + 1), x, p) - geom.distance(traj.state(node - 1), x, p)) / (2.0 * dt)
    return float(lhs - ricci_line_integral(traj.state(node), x, p))


def ricci_line_integral(m, x, p) -> float:
    """-int_gamma Ric(xi, xi) dr along the minimizing path from p to x."""
    geom = m.geometry
    if isinstance(geom, SphereGrid):
        return -(geom.n - 1) / m.params * geom.distance(m, x, p)
    if isinstance(geom, FlatTorusGrid):
        return 0.0
    if isinstance(geom, ConformalTorusGrid):
        src = geom.nearest_index(p)
        dst = geom.nearest_index(x)
        _, pred = geom.shortest_paths(m, src)
        nodes = geom.path_nodes(pred, src, dst)
        phi = m.params.ravel()
        R = geom.scalar_curvature(m).ravel()
        total = 0.0
        for a, b in zip(nodes[:-1], nodes[1:]):
            ia, ib = np.unravel_index(a, geom.shape), np.unravel_index(b, geom.shape)
            step = np.array([ib[i] - ia[i] for i in range(2)], dtype=float)
            step -= np.round(step / np.array(geom.sizes)) * np.array(geom.sizes)
            length = float(np.hypot(step[0] * geom.spacing[0], step[1] * geom.spacing[1]))
            # Ric(xi, xi) = R / 2 in two dimensions; dr = e^phi |dx|
            total += 0.25 * length * (math.exp(phi[a]) * R[a] + math.exp(phi[b]) * R[b])
        return -total
    raise TypeError(f"unsupported geometry {type(geom).__name__}")


def quadratic_root_bounds(p: float, q: float, r: float) -> tuple[float, float]:
    """Widened interval containing the roots of p y^2 + q y + r for p, q > 0 > r."""
    if not (p > 0 and q > 0 and r < 0):
        raise ValueError(f"need p > 0, q > 0, r < 0, got p={p}, q={q}, r={r}")
    root = math.sqrt(-4.0 * p * r)
    return (-q - root) / p, (q + root) / p


def quadratic_roots(p: float, q: float, r: float) -> tuple[float, float]:
    disc = math.sqrt(q * q - 4.0 * p * r)
    return (-q - disc) / (2.0 * p), (-q + disc) / (2.0 * p)


# --------------------------------------------------------------------------
# localized bound
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalizationParams:
    center: tuple
    rho: float
    delta: float
    n: int

    def __post_init__(self):
        problems = validate_localization(self.rho, self.delta, self.n)
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def C3(self) -> float:
        return 4.0 * math.sqrt(self.delta * self.n)


def validate_localization(rho, delta, n) -> list:
    problems = []
    if not rho > 0:
        problems.append(f"rho must be positive (got {rho})")
    if not 0 < delta < 1.0 / (4 * n):
        problems.append(f"delta must satisfy 0 < delta < 1/(4n) = {1.0 / (4 * n)} (got {delta})")
    return problems


def measure_K(traj: MetricTrajectory, center, rho: float) -> float:
    """max(0, -min Ricci eigenvalue) over {d(x, center, t) <= 2 rho}, all nodes."""
    geom = traj.geometry
    worst = math.inf
    for m in traj.states():
        inside = geom.distance_field(m, center) <= 2.0 * rho
        if np.any(inside):
            worst = min(worst, float(np.min(min_ricci_eigenvalue(m)[inside])))
    return max(0.0, -worst) if math.isfinite(worst) else 0.0


def localized_rhs(n, delta, C, tau, rho, K, T):
    """(4n / (1 - 4 delta n)) * (1/tau + C (1/rho^2 + sqrt(K)/rho + K/rho + 1/T))."""
    lead = 4.0 * n / (1.0 - 4.0 * delta * n)
    return lead * (1.0 / np.asarray(tau) + C * (1.0 / rho**2 + math.sqrt(K) / rho + K / rho + 1.0 / T))


def localized_lhs(hist: SolutionHistory, node: int, order: int = 4) -> np.ndarray:
    """|grad u|^2/u^2 - 2 u_tau/u - R at an interior node (u_tau = -u_t)."""
    geom = hist.geometry
    m = hist.state(node)
    lo, hi = max(0, node - 2), min(len(hist), node + 3)
    dw = time_derivative(hist.w[lo:hi], hist.dt, order=order)[node - lo]
    return geom.grad_norm_sq(m, hist.w[node]) + 2.0 * dw - geom.scalar_curvature(m)


def localized_bound_check(
    traj: MetricTrajectory,
    hist: SolutionHistory,
    params: LocalizationParams,
    cutoff: CutoffProfile | None = None,
    tol: float = 0.0,
    tau_min=None,
) -> HarnackReport:
    """Margins RHS - LHS on Q_rho (where the cutoff equals 1), nodes with tau >= tau_min."""
    geom = hist.geometry
    if params.n != geom.n:
        raise ValueError("localization dimension does not match the geometry")
    if cutoff is None:
        cutoff = build_cutoff(params.rho)
    K = measure_K(traj, params.center, params.rho)
    C = max(cutoff.C1, cutoff.C2, params.C3)
    if tau_min is None:
        tau_min = TAU_WINDOW * hist.dt
    margins, lhs_col, rhs_col, tau_col, locs = [], [], [], [], []
    for k in range(1, len(hist) - 1):
        tau = float(hist.tau[k])
        if tau < tau_min - 1e-12:
            continue
        m = hist.state(k)
        inside = cutoff.phi(geom.distance_field(m, params.center)) == 1.0
        if not np.any(inside):
            continue
        lhs = localized_lhs(hist, k)[inside]
        rhs = float(localized_rhs(geom.n, params.delta, C, tau, params.rho, K, traj.T))
        idx = np.flatnonzero(inside.ravel())
        for j, v in zip(idx, lhs):
            margins.append(rhs - v)
            lhs_col.append(v)
            rhs_col.append(rhs)
            tau_col.append(tau)
            locs.append(geom.node_point(np.unravel_index(j, geom.shape)))
    return HarnackReport(
        "localized_bound",
        margins,
        tol=tol,
        sense="ge0",
        locations=locs,
        columns={"tau": tau_col, "lhs": lhs_col, "rhs": rhs_col},
        meta={"K": K, "C": C, "C1": cutoff.C1, "C2": cutoff.C2, "C3": params.C3, "rho": params.rho, "delta": params.delta},
    )
