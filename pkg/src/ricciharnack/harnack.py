"""
Harnack quantity P, its evolution, and the pointwise and integrated checks.

For a conjugate-heat solution u = (4 pi tau)^{-n/2} e^{-f}:

    P = 2 Lap f - |grad f|^2 + R - 2n / tau.

Time derivatives of derived fields use the five-point centered stencil on
interior nodes; only nodes with tau >= ``tau_min`` (default 10 dt) and at
least two steps from either end of the history enter a residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .conjugate_heat import TAU_WINDOW, PotentialField, SolutionHistory, potential_history, region_mask, select_nodes
from .geometry import MetricState, contract, tensor_norm_sq, tensor_trace
from .paths import interpolate_field, path_average, theta_action
from .reports import HarnackReport, ResidualReport
from .ricci_flow import time_derivative

TIME_ORDER = 4


class HypothesisError(ValueError):
    """Raised when a lemma hypothesis fails on the supplied data."""


@dataclass(frozen=True)
class IntegratedHarnackParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")


def _f_values(f):
    return f.f if isinstance(f, PotentialField) else np.asarray(f, dtype=float)


def harnack_P(m: MetricState, f, tau: float) -> np.ndarray:
    """P = 2 Lap f - |grad f|^2 + R - 2n/tau."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    geom = m.geometry
    fv = _f_values(f)
    return 2.0 * geom.laplacian(m, fv) - geom.grad_norm_sq(m, fv) + geom.scalar_curvature(m) - 2.0 * geom.n / tau


def harnack_history(hist: SolutionHistory) -> np.ndarray:
    f = potential_history(hist)
    return np.stack([harnack_P(hist.state(k), f[k], float(hist.tau[k])) for k in range(len(hist))])


def liyau_form(hist: SolutionHistory, node: int, order: int = TIME_ORDER) -> np.ndarray:
    """|grad u|^2/u^2 - 2 u_tau/u - R - 2n/tau at one node.

    The time derivative is taken in the backward variable tau = T - t
    (u_tau = -u_t); this is the reading under which the form coincides with P.
    """
    if not 0 < node < len(hist) - 1:
        raise ValueError("liyau_form needs an interior node")
    geom = hist.geometry
    m = hist.state(node)
    # w = log u, so u_tau / u = -dw/dt
    lo, hi = max(0, node - 2), min(len(hist), node + 3)
    dw = time_derivative(hist.w[lo:hi], hist.dt, order=order)[node - lo]
    tau = float(hist.tau[node])
    return geom.grad_norm_sq(m, hist.w[node]) + 2.0 * dw - geom.scalar_curvature(m) - 2.0 * geom.n / tau


def _report(hist, names_fields, nodes, mask, extra=None):
    geom = hist.geometry
    wts = np.stack([geom.volume_weights(hist.state(k))[mask] for k in nodes])
    report = ResidualReport(
        meta={"family": geom.family, "grid": geom.shape, "h": geom.h, "dt": hist.dt, "nodes": len(nodes), **(extra or {})}
    )
    for name, (res, scale) in names_fields.items():
        vals = np.stack([res[k][mask] for k in nodes]) if len(nodes) else np.zeros((0,))
        report.add(name, vals, wts if len(nodes) else None, scale)
    return report


def lemma_identity_residuals(traj, hist: SolutionHistory, tau_min=None, region=None, order: int = TIME_ORDER):
    """Residuals of the Lap f and |grad f|^2 evolutions and of the Bochner identity.

    The Lap f identity is evaluated with the independent 2h-stencil
    Laplacian: with the solver's own stencil it holds exactly on tori for
    the semi-discrete scheme and would show only time error.
    """
    del traj  # the history carries its trajectory
    if len(hist) < 3:
        raise ValueError("need at least three history nodes")
    geom = hist.geometry
    f = potential_history(hist)
    K = len(hist)
    lap_f, gsq, res_b = np.empty_like(f), np.empty_like(f), np.empty_like(f)
    res1, res2 = np.empty_like(f), np.empty_like(f)
    parts1, parts2 = [], []
    wide = geom.laplacian_wide
    for k in range(K):
        m = hist.state(k)
        lap_f[k] = wide(m, f[k])
        gsq[k] = geom.grad_norm_sq(m, f[k])
    dlap = time_derivative(lap_f, hist.dt, order=order)
    dgsq = time_derivative(gsq, hist.dt, order=order)
    for k in range(K):
        m = hist.state(k)
        R = geom.scalar_curvature(m)
        ric = geom.frame_ricci(m)
        hess = geom.frame_hessian(m, f[k])
        grad = geom.frame_gradient(m, f[k])
        lap_gsq = geom.laplacian(m, gsq[k])
        ric_hess = np.sum(ric * hess, axis=(0, 1))
        ric_ff = contract(ric, grad, grad)
        hess_sq = tensor_norm_sq(hess)
        res1[k] = dlap[k] + wide(m, lap_f[k]) - 2.0 * ric_hess - wide(m, gsq[k]) + wide(m, R)
        res2[k] = (
            dgsq[k]
            + lap_gsq
            - 4.0 * ric_ff
            - 2.0 * geom.inner_grad(m, f[k], gsq[k])
            - 2.0 * hess_sq
            + 2.0 * geom.inner_grad(m, f[k], R)
        )
        lap_compact = geom.laplacian(m, f[k])
        res_b[k] = lap_gsq - 2.0 * hess_sq - 2.0 * geom.inner_grad(m, f[k], lap_compact) - 2.0 * ric_ff
        parts1.append(max(np.max(np.abs(dlap[k])), np.max(np.abs(lap_gsq))))
        parts2.append(max(np.max(np.abs(dgsq[k])), np.max(np.abs(2.0 * hess_sq))))
    nodes = select_nodes(hist, tau_min)
    mask = region_mask(hist.geometry, region)
    scale1 = float(max(parts1[k] for k in nodes)) if len(nodes) else 0.0
    scale2 = float(max(parts2[k] for k in nodes)) if len(nodes) else 0.0
    return _report(hist, {"lap_f": (res1, scale1), "grad_sq": (res2, scale2), "bochner": (res_b, scale2)}, nodes, mask)


def harnack_tensor(m: MetricState, f, tau: float) -> np.ndarray:
    """Ric + Hess f - g/tau in the orthonormal frame."""
    geom = m.geometry
    return geom.frame_ricci(m) + geom.frame_hessian(m, _f_values(f)) - np.asarray(geom.frame_metric()) / tau


def p_evolution_residual(traj, hist: SolutionHistory, tau_min=None, region=None, order: int = TIME_ORDER):
    """Residual of the P evolution, in two forms.

    ``p_evolution``: (d_t + Lap) P - 2<grad f, grad P> - 2|Ric + Hess f - g/tau|^2
    - (2/tau)(P + |grad f|^2 + R), which is what the chain rule gives.

    ``p_evolution_as_printed`` additionally subtracts 4n/tau^2; it differs
    from the first by exactly that amount and is reported, not asserted.
    """
    del traj
    if len(hist) < 3:
        raise ValueError("need at least three history nodes")
    geom = hist.geometry
    n = geom.n
    f = potential_history(hist)
    P = np.stack([harnack_P(hist.state(k), f[k], float(hist.tau[k])) for k in range(len(hist))])
    dP = time_derivative(P, hist.dt, order=order)
    res = np.empty_like(P)
    printed = np.empty_like(P)
    scale = []
    for k in range(len(hist)):
        m = hist.state(k)
        tau = float(hist.tau[k])
        tens = harnack_tensor(m, f[k], tau)
        lower = (2.0 / tau) * (P[k] + geom.grad_norm_sq(m, f[k]) + geom.scalar_curvature(m))
        quad = 2.0 * tensor_norm_sq(tens)
        res[k] = dP[k] + geom.laplacian(m, P[k]) - 2.0 * geom.inner_grad(m, f[k], P[k]) - quad - lower
        printed[k] = res[k] - 4.0 * n / tau**2
        scale.append(max(np.max(np.abs(dP[k])), np.max(quad), np.max(np.abs(lower))))
    nodes = select_nodes(hist, tau_min)
    mask = region_mask(hist.geometry, region)
    sc = float(max(scale[k] for k in nodes)) if len(nodes) else 0.0
    return _report(hist, {"p_evolution": (res, sc), "p_evolution_as_printed": (printed, sc)}, nodes, mask)


def pinching_gap(m: MetricState, f, tau: float) -> np.ndarray:
    """|Ric + Hess f - g/tau|^2 - (1/n)(trace)^2, nonnegative by Cauchy-Schwarz.

    The trace is taken of the discrete frame tensor itself, so the gap is
    nonnegative up to round-off at any resolution.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    tens = harnack_tensor(m, f, tau)
    return tensor_norm_sq(tens) - tensor_trace(tens) ** 2 / m.geometry.n


def pinching_identity_residual(m: MetricState, f, tau: float) -> np.ndarray:
    """P + R + |grad f|^2 - 2(R + Lap f - n/tau): zero up to round-off."""
    geom = m.geometry
    fv = _f_values(f)
    R = geom.scalar_curvature(m)
    lap = geom.laplacian(m, fv)
    return harnack_P(m, fv, tau) + R + geom.grad_norm_sq(m, fv) - 2.0 * (R + lap - geom.n / tau)


def check_harnack_sign(hist: SolutionHistory, tol: float = 0.0, tau_min=None, region=None) -> HarnackReport:
    """Per-node max over space of P on nodes with tau >= tau_min.

    The report is flagged ``asserted`` only when the trajectory's scalar
    curvature is nonnegative up to ``tol``; otherwise it is a probe.
    """
    geom = hist.geometry
    if tau_min is None:
        tau_min = TAU_WINDOW * hist.dt
    mask = region_mask(hist.geometry, region)
    f = potential_history(hist)
    nodes = np.flatnonzero(hist.tau >= tau_min - 1e-12)
    values, locs, taus, min_r = [], [], [], []
    for k in nodes:
        m = hist.state(k)
        P = harnack_P(m, f[k], float(hist.tau[k]))
        P = np.where(mask, P, -np.inf)
        j = int(np.argmax(P))
        values.append(P.flat[j])
        locs.append(geom.node_point(np.unravel_index(j, geom.shape)))
        taus.append(float(hist.tau[k]))
        min_r.append(float(np.min(geom.scalar_curvature(m))))
    asserted = bool(min(min_r) >= -tol) if min_r else False
    return HarnackReport(
        "max_P",
        values,
        tol=tol,
        sense="le0",
        locations=locs,
        columns={"tau": taus, "min_R": min_r},
        meta={"family": geom.family, "tau_min": tau_min, "asserted": asserted},
    )


# --------------------------------------------------------------------------
# integrated Harnack inequality along space-time paths
# --------------------------------------------------------------------------


@dataclass(eq=False)
class FieldHistory:
    """A positive space-time field log u on a uniform time grid.

    ``metric_at`` returns the metric state at time t (for a static metric,
    a constant function).
    """

    metric_at: Callable
    times: np.ndarray
    log_u: np.ndarray

    @property
    def geometry(self):
        return self.metric_at(float(self.times[0])).geometry

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self):
        return len(self.times)


def forward_heat_kernel_history(geom, center, times) -> FieldHistory:
    """Torus heat kernel u(x, t) started at t = 0 (a forward heat solution on a flat torus)."""
    from .oracles import torus_heat_kernel

    m = geom.initial_state()
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ValueError("forward kernel times must be positive")
    logs = np.stack([torus_heat_kernel(geom, m, center, float(t))[0] for t in times])
    return FieldHistory(lambda t: m, times, logs)


def lemma_hypothesis_excess(u: FieldHistory, alpha: float, order: int = TIME_ORDER) -> np.ndarray:
    """t (|grad f|^2 - alpha f_t) per node and point, f = log u.

    The hypothesis -f_t <= (beta/t - |grad f|^2)/alpha holds exactly where
    this is at most beta.
    """
    geom = u.geometry
    ft = time_derivative(u.log_u, u.dt, order=order)
    out = np.empty_like(u.log_u)
    for k, t in enumerate(u.times):
        m = u.metric_at(float(t))
        out[k] = t * (geom.grad_norm_sq(m, u.log_u[k]) - alpha * ft[k])
    return out


def measure_beta(u: FieldHistory, alpha: float = 1.0, order: int = TIME_ORDER) -> float:
    return float(np.max(lemma_hypothesis_excess(u, alpha, order)))


def _node_value(u_log, geom, point):
    return interpolate_field(geom, u_log, point)


def integrated_harnack_check(
    u: FieldHistory, params: IntegratedHarnackParams, pairs, tol: float = 0.0, m: int = 33
) -> HarnackReport:
    """Margins of the path-integrated bound for each pair (x1, k1, x2, k2), k1 < k2 time nodes.

    Asserted form (earlier point bounded by the later one):
        log u(x1,t1) <= log u(x2,t2) + (beta/alpha) log(t2/t1) + (alpha/4) Theta.
    The reversed form with exponent alpha/beta is reported in column ``margin_reversed``.
    """
    geom = u.geometry
    excess = lemma_hypothesis_excess(u, params.alpha)
    # hypothesis on interior nodes (end stencils are one-sided)
    inner = excess[1:-1]
    if np.max(inner) > params.beta + tol:
        k, j = np.unravel_index(int(np.argmax(inner)), inner.shape[:1] + (inner[0].size,))
        raise HypothesisError(
            f"hypothesis fails at t={u.times[k + 1]}, point {geom.node_point(np.unravel_index(j, geom.shape))}: "
            f"t(|grad f|^2 - alpha f_t) = {inner[k].flat[j]} > beta = {params.beta}"
        )
    a, b = params.alpha, params.beta
    margins, reversed_, thetas, locs = [], [], [], []
    for x1, k1, x2, k2 in pairs:
        if not k1 < k2:
            raise ValueError("pairs need t1 < t2")
        t1, t2 = float(u.times[k1]), float(u.times[k2])
        theta = theta_action(u.metric_at, x1, t1, x2, t2, m=m).value
        l1, l2 = _node_value(u.log_u[k1], geom, x1), _node_value(u.log_u[k2], geom, x2)
        margins.append(l2 + (b / a) * math.log(t2 / t1) + 0.25 * a * theta - l1)
        reversed_.append(l1 + (a / b) * math.log(t2 / t1) + 0.25 * a * theta - l2)
        thetas.append(theta)
        locs.append((tuple(np.ravel(x1)), t1, tuple(np.ravel(x2)), t2))
    return HarnackReport(
        "integrated_harnack",
        margins,
        tol=tol,
        sense="ge0",
        locations=locs,
        columns={"theta": thetas, "margin_reversed": reversed_},
        meta={"alpha": a, "beta": b},
    )


def harnack_ratio_check(traj, hist: SolutionHistory, pairs, tol: float = 0.0, m: int = 33) -> HarnackReport:
    """Margins of the two-point ratio bound for conjugate-heat solutions.

    Per pair (x1, k1, x2, k2) of history nodes with t1 < t2,

        margin = n log(tau1/tau2) + Theta/2 + (tau1 - tau2)/2 * Rbar - log(u2/u1),

    where the path term equals Theta/2 after reparametrizing s in [0, 1].
    ``value`` uses Rbar = sup of R along the optimized path; column
    ``margin_integral`` uses the path average of R.
    """
    geom = hist.geometry
    n = geom.n
    min_r = min(float(np.min(geom.scalar_curvature(s))) for s in traj.states())
    sup_m, int_m, thetas, locs = [], [], [], []
    for x1, k1, x2, k2 in pairs:
        t1, t2 = float(hist.times[k1]), float(hist.times[k2])
        tau1, tau2 = float(hist.tau[k1]), float(hist.tau[k2])
        if tau1 == tau2:
            raise ValueError("pairs need tau1 != tau2")
        if not t1 < t2:
            raise ValueError("pairs need t1 < t2")
        res = theta_action(traj, x1, t1, x2, t2, m=m)

        def r_at(p, t):
            st = traj.state_at(float(t))
            return interpolate_field(geom, geom.scalar_curvature(st), p)

        r_sup, r_int = path_average(r_at, res.path)
        log_ratio = _node_value(hist.w[k2], geom, x2) - _node_value(hist.w[k1], geom, x1)
        base = n * math.log(tau1 / tau2) + 0.5 * res.value - log_ratio
        sup_m.append(base + 0.5 * (tau1 - tau2) * r_sup)
        int_m.append(base + 0.5 * (tau1 - tau2) * r_int)
        thetas.append(res.value)
        locs.append((tuple(np.ravel(x1)), t1, tuple(np.ravel(x2)), t2))
    return HarnackReport(
        "harnack_ratio",
        sup_m,
        tol=tol,
        sense="ge0",
        locations=locs,
        columns={"margin_integral": int_m, "theta": thetas},
        meta={"family": geom.family, "min_R": min_r, "asserted": min_r >= -tol},
    )


def random_pairs(geom, times, count: int, seed: int, min_index: int = 0, max_index=None):
    """Seeded random (x1, k1, x2, k2) grid-point pairs with k1 < k2.

    Points avoid the cut locus of each other (3-cell exclusion).
    """
    rng = np.random.default_rng(seed)
    K = len(times) if max_index is None else max_index + 1
    out = []
    while len(out) < count:
        k1, k2 = sorted(rng.choice(np.arange(min_index, K), size=2, replace=False))
        i1 = tuple(int(rng.integers(0, s)) for s in geom.shape)
        i2 = tuple(int(rng.integers(0, s)) for s in geom.shape)
        x1, x2 = geom.node_point(i1), geom.node_point(i2)
        if geom.near_cut_locus(x2, x1):
            continue
        out.append((x1, int(k1), x2, int(k2)))
    return out


__all__ = [
    "HypothesisError",
    "IntegratedHarnackParams",
    "FieldHistory",
    "harnack_P",
    "harnack_history",
    "liyau_form",
    "lemma_identity_residuals",
    "harnack_tensor",
    "p_evolution_residual",
    "pinching_gap",
    "pinching_identity_residual",
    "check_harnack_sign",
    "forward_heat_kernel_history",
    "lemma_hypothesis_excess",
    "measure_beta",
    "integrated_harnack_check",
    "harnack_ratio_check",
    "random_pairs",
]
