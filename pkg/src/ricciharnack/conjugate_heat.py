"""
Conjugate heat equation (-d_t - Lap + R) u = 0 along a stored Ricci flow.

The solver evolves the log-density w = log u forward in the backward time
tau = T - t through

    dw/dtau = Lap w + |grad w|^2 - R,

so positivity of u holds by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geometry import FlatTorusGrid, MetricState, SphereGrid
from .oracles import torus_heat_kernel
from .reports import ResidualReport
from .ricci_flow import MAX_HALVINGS, MetricTrajectory, rk4_step, time_derivative

TAU_WINDOW = 10.0


class SolverError(RuntimeError):
    """Raised when the conjugate-heat integration fails."""


@dataclass(eq=False)
class SolutionHistory:
    """Log-density w on the trajectory nodes between t0 and t1 (ascending in t)."""

    trajectory: MetricTrajectory
    nodes: np.ndarray
    w: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times[self.nodes]

    @property
    def tau(self) -> np.ndarray:
        return self.trajectory.T - self.times

    @property
    def geometry(self):
        return self.trajectory.geometry

    @property
    def n(self) -> int:
        return self.trajectory.geometry.n

    @property
    def dt(self) -> float:
        return self.trajectory.dt

    def __len__(self):
        return len(self.nodes)

    def state(self, k: int) -> MetricState:
        return self.trajectory.state(int(self.nodes[k]))

    def u(self, k: int | None = None) -> np.ndarray:
        return np.exp(self.w if k is None else self.w[k])

    def scaled(self, lam: float) -> "SolutionHistory":
        return SolutionHistory(self.trajectory, self.nodes, self.w + math.log(lam))

    def write_csv(self, path) -> None:
        geom = self.geometry
        coords = [c.ravel() for c in geom.coords]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "tau", *(f"x{i}" for i in range(len(coords))), "w"])
            for k in range(len(self)):
                t, tau = repr(float(self.times[k])), repr(float(self.tau[k]))
                for i, v in enumerate(self.w[k].ravel()):
                    w.writerow([t, tau, *(repr(float(c[i])) for c in coords), repr(float(v))])


@dataclass
class PotentialField:
    f: np.ndarray
    tau: float


def log_density_rhs(m: MetricState, w: np.ndarray) -> np.ndarray:
    """d w / d tau = Lap w + |grad w|^2 - R."""
    geom = m.geometry
    return geom.laplacian(m, w) + geom.grad_norm_sq(m, w) - geom.scalar_curvature(m)


def solve_conjugate(traj: MetricTrajectory, w1, t1: float, t0: float = 0.0) -> SolutionHistory:
    """Solve backward in t from terminal log-density ``w1`` at t1 down to t0."""
    geom = traj.geometry
    if not (0.0 <= t0 < t1 < traj.T):
        raise SolverError(f"need 0 <= t0 < t1 < T, got t0={t0}, t1={t1}, T={traj.T}")
    w = geom.check_field(w1).copy()
    if not np.all(np.isfinite(w)):
        raise SolverError("terminal log-density is not finite")
    k1, k0 = traj.index_of(t1), traj.index_of(t0)
    dt = traj.dt
    out = [w.copy()]

    def rhs(y, t):
        # y advances in tau = T - t, so the callback receives t going downward
        return log_density_rhs(traj.state_at(t), y)

    for k in range(k1, k0, -1):
        t_hi = traj.times[k]
        m = traj.state(k)
        speed = 2.0 * float(np.sqrt(np.max(geom.grad_norm_sq(m, w))))
        for halvings in range(MAX_HALVINGS + 1):
            sub = dt / 2**halvings
            if sub <= geom.stable_dt(m, advection=speed):
                break
        else:
            raise SolverError(f"step-size failure after {MAX_HALVINGS} halvings at node {k} (t={t_hi})")
        for j in range(2**halvings):
            t = t_hi - j * sub
            w = rk4_step(lambda y, s: rhs(y, t - s), w, 0.0, sub)
        if not np.all(np.isfinite(w)):
            bad = np.unravel_index(int(np.flatnonzero(~np.isfinite(w))[0]), geom.shape)
            raise SolverError(f"non-finite log-density at node {k - 1} (t={traj.times[k - 1]}), grid index {bad}")
        out.append(w.copy())
    nodes = np.arange(k0, k1 + 1)
    return SolutionHistory(traj, nodes, np.stack(out[::-1]))


# --------------------------------------------------------------------------
# terminal data
# --------------------------------------------------------------------------


def terminal_profile(traj: MetricTrajectory, t1: float, profile: str = "gaussian", center=None, **params):
    """Terminal log-density at t1.

    Profiles:

    ``gaussian``
        ``-d(x, center)^2 / (4 tau1) - (n/2) log(4 pi tau1)``, tau1 = T - t1.
    ``heat_kernel``
        log of the lattice-periodized Gaussian at kernel time tau1 (flat torus only).
    ``constant``
        ``log(value)``.
    ``trig``
        log of ``1 + amplitude * mode`` with a cosine mode (|amplitude| < 1).
    """
    geom = traj.geometry
    m = traj.state(traj.index_of(t1))
    tau1 = traj.T - t1
    n = geom.n
    if center is None:
        center = (0.0,) * len(geom.coords)
    if profile == "gaussian":
        d = geom.distance_field(m, center)
        return -(d**2) / (4.0 * tau1) - 0.5 * n * math.log(4.0 * math.pi * tau1)
    if profile == "heat_kernel":
        if not isinstance(geom, FlatTorusGrid):
            raise ValueError("heat_kernel terminal data needs a flat torus")
        return torus_heat_kernel(geom, m, center, tau1)[0]
    if profile == "constant":
        return np.full(geom.shape, math.log(params.get("value", 1.0)))
    if profile == "trig":
        amp = params.get("amplitude", 0.5)
        if not abs(amp) < 1:
            raise ValueError("trig amplitude must be below 1 in magnitude")
        if isinstance(geom, SphereGrid):
            mode = np.cos(geom.theta)
        else:
            mode = np.prod([np.cos(2.0 * math.pi * c / L) for c, L in zip(geom.coords, geom.lengths)], axis=0)
        return np.log(1.0 + amp * mode) + math.log(params.get("value", 1.0))
    raise ValueError(f"unknown terminal profile {profile!r}")


# --------------------------------------------------------------------------
# derived quantities and residuals
# --------------------------------------------------------------------------


def potential_f(hist: SolutionHistory, node: int) -> PotentialField:
    """f = -w - (n/2) log(4 pi tau) at one history node."""
    tau = float(hist.tau[node])
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return PotentialField(-hist.w[node] - 0.5 * hist.n * math.log(4.0 * math.pi * tau), tau)


def potential_history(hist: SolutionHistory) -> np.ndarray:
    tau = hist.tau.reshape((-1,) + (1,) * len(hist.geometry.shape))
    if np.any(tau <= 0):
        raise ValueError("history reaches tau <= 0")
    return -hist.w - 0.5 * hist.n * np.log(4.0 * math.pi * tau)


def _weights(hist):
    return np.stack([hist.geometry.volume_weights(hist.state(k)) for k in range(len(hist))])


def select_nodes(hist: SolutionHistory, tau_min=None) -> np.ndarray:
    """Interior nodes (two from each end when possible) with tau >= tau_min (default 10 dt)."""
    if tau_min is None:
        tau_min = TAU_WINDOW * hist.dt
    K = len(hist)
    edge = 2 if K >= 5 else 1
    idx = np.arange(edge, K - edge)
    return idx[hist.tau[idx] >= tau_min - 1e-12]


def region_mask(geom, region) -> np.ndarray:
    if region is None:
        return np.ones(geom.shape, dtype=bool)
    mask = np.asarray(region, dtype=bool)
    if mask.shape != geom.shape:
        raise ValueError("region mask does not match the grid")
    return mask


def f_evolution_residual(
    hist: SolutionHistory, tau_min=None, region=None, order: int = 4, independent: bool = True
) -> ResidualReport:
    """Residuals of df/dt + Lap f - |grad f|^2 + R - n/(2 tau) and of the w-equation.

    Both use centered time differences (five-point by default); they agree
    up to the difference error of the explicit log(tau) term. The solver
    integrates exactly the compact-stencil equation, so by default the
    Laplacian here is the independent 2h-stencil one; the residual then
    measures the distance to the continuous equation at O(h^2).
    """
    if len(hist) < 3:
        raise ValueError("need at least three history nodes")
    geom = hist.geometry
    f = potential_history(hist)
    df = time_derivative(f, hist.dt, order=order)
    dw = time_derivative(hist.w, hist.dt, order=order)
    lap = geom.laplacian_wide if independent else geom.laplacian
    res_f, res_w = np.empty_like(f), np.empty_like(f)
    for k in range(len(hist)):
        m = hist.state(k)
        R = geom.scalar_curvature(m)
        tau = hist.tau[k]
        res_f[k] = df[k] + lap(m, f[k]) - geom.grad_norm_sq(m, f[k]) + R - hist.n / (2.0 * tau)
        res_w[k] = dw[k] + lap(m, hist.w[k]) + geom.grad_norm_sq(m, hist.w[k]) - R
    nodes = select_nodes(hist, tau_min)
    mask = region_mask(geom, region)
    wts = np.stack([geom.volume_weights(hist.state(k))[mask] for k in nodes])
    report = ResidualReport(meta={"family": geom.family, "grid": geom.shape, "h": geom.h, "dt": hist.dt})
    report.add("f_equation", np.stack([res_f[k][mask] for k in nodes]), wts, float(np.max(np.abs(df[nodes]))))
    report.add("w_equation", np.stack([res_w[k][mask] for k in nodes]), wts, float(np.max(np.abs(dw[nodes]))))
    return report


def conjugacy_residual(traj: MetricTrajectory, u, v, nodes=None, boundary_term: bool = True) -> float:
    """|int int (box u) v - u (box* v) dmu dt| with box = d_t - Lap.

    ``u`` and ``v`` are arrays over consecutive trajectory nodes (``nodes``,
    default all). For fields that do not vanish at the ends of the time
    window the exact identity carries the boundary term
    ``[int u v dmu]_{t0}^{t1}``, which is subtracted when ``boundary_term`` is set.
    """
    geom = traj.geometry
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if nodes is None:
        nodes = np.arange(len(traj))
    states = [traj.state(int(k)) for k in nodes]
    dt = traj.dt
    du = time_derivative(u, dt)
    dv = time_derivative(v, dt)
    lhs, rhs, uv = [], [], []
    for k, m in enumerate(states):
        box_u = du[k] - geom.laplacian(m, u[k])
        box_star_v = -dv[k] - geom.laplacian(m, v[k]) + geom.scalar_curvature(m) * v[k]
        lhs.append(geom.integrate(m, box_u * v[k]))
        rhs.append(geom.integrate(m, u[k] * box_star_v))
        uv.append(geom.integrate(m, u[k] * v[k]))
    diff = np.trapezoid(np.array(lhs) - np.array(rhs), dx=dt)
    if boundary_term:
        diff -= uv[-1] - uv[0]
    return float(abs(diff))


def mass_history(hist: SolutionHistory) -> np.ndarray:
    return np.array([hist.geometry.integrate(hist.state(k), hist.u(k)) for k in range(len(hist))])


def mass_integral_drift(hist: SolutionHistory) -> float:
    """max_t |int u dmu(t) - int u dmu(t1)| / int u dmu(t1)."""
    mass = mass_history(hist)
    return float(np.max(np.abs(mass - mass[-1])) / mass[-1])
