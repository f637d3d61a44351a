"""
Forward Ricci flow on the model families and the appendix evolution identities.

The sphere is integrated through ``d(r^2)/dt = -2(n-1)``; the flat torus is a
fixed point; the conformal torus evolves by ``dphi/dt = exp(-2 phi) Lap0 phi``
with the method of lines and classical RK4.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    ConformalTorusGrid,
    DiscreteGeometry,
    FlatTorusGrid,
    GeometryError,
    MetricState,
    SphereGrid,
    _d1,
    tensor_norm_sq,
)
from .reports import ResidualReport

MAX_HALVINGS = 8
SPHERE_GUARD = 0.9


class FlowError(RuntimeError):
    """Raised when the flow cannot be integrated as requested."""


def rk4_step(rhs, y, t, dt):
    k1 = rhs(y, t)
    k2 = rhs(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(y + dt * k3, t + dt)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def uniform_grid(T: float, dt: float) -> tuple[np.ndarray, float]:
    if not (T > 0 and dt > 0):
        raise FlowError("horizon and time step must be positive")
    K = max(1, int(round(T / dt)))
    return np.linspace(0.0, T, K + 1), T / K


def extinction_time(n: int, r0: float) -> float:
    return r0**2 / (2.0 * (n - 1))


@dataclass(eq=False)
class MetricTrajectory:
    geometry: DiscreteGeometry
    times: np.ndarray
    params: list
    dt: float

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)

    def state(self, k: int) -> MetricState:
        return MetricState(self.geometry, float(self.times[k]), self.params[k])

    def states(self):
        return [self.state(k) for k in range(len(self))]

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k >= len(self) or abs(self.times[k] - t) > 1e-9 * max(1.0, self.T):
            raise FlowError(f"time {t} is not a trajectory node")
        return k

    def state_at(self, t: float) -> MetricState:
        """Metric at an arbitrary time by cubic Lagrange interpolation in t."""
        if t < -1e-12 or t > self.T + 1e-12:
            raise FlowError(f"time {t} outside [0, {self.T}]")
        K = len(self) - 1
        s = t / self.dt
        k = int(round(s))
        if abs(s - k) < 1e-10 and 0 <= k <= K:
            return self.state(k)
        if K < 3:
            nodes = list(range(K + 1))
        else:
            lo = min(max(int(math.floor(s)) - 1, 0), K - 3)
            nodes = list(range(lo, lo + 4))
        xs = [self.times[j] for j in nodes]
        weights = []
        for a, xa in enumerate(xs):
            w = 1.0
            for b, xb in enumerate(xs):
                if a != b:
                    w *= (t - xb) / (xa - xb)
            weights.append(w)
        if isinstance(self.geometry, FlatTorusGrid):
            p = self.params[nodes[0]]
        elif isinstance(self.geometry, SphereGrid):
            p = float(sum(w * self.params[j] for w, j in zip(weights, nodes)))
        else:
            p = sum(w * self.params[j] for w, j in zip(weights, nodes))
        return MetricState(self.geometry, float(t), p)

    def volumes(self) -> np.ndarray:
        return np.array([self.geometry.volume(m) for m in self.states()])

    def write_csv(self, path) -> None:
        geom = self.geometry
        with open(path, "w", newline="") as fh:
            fh.write(f"# T={self.T!r} dt={self.dt!r} grid={'x'.join(map(str, geom.shape))} family={geom.family}\n")
            w = csv.writer(fh, lineterminator="\n")
            if isinstance(geom, SphereGrid):
                w.writerow(["t", "r2"])
                for t, r2 in zip(self.times, self.params):
                    w.writerow([repr(float(t)), repr(float(r2))])
            elif isinstance(geom, FlatTorusGrid):
                w.writerow(["t", *(f"a{i}" for i in range(geom.n))])
                for t, a in zip(self.times, self.params):
                    w.writerow([repr(float(t)), *(repr(float(v)) for v in a)])
            else:
                w.writerow(["t", "x0", "x1", "phi"])
                x0, x1 = (c.ravel() for c in geom.coords)
                for t, phi in zip(self.times, self.params):
                    ts = repr(float(t))
                    for a, b, v in zip(x0, x1, phi.ravel()):
                        w.writerow([ts, repr(float(a)), repr(float(b)), repr(float(v))])


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------


def _check_sphere_horizon(n, r0, T, guard):
    ext = extinction_time(n, r0)
    if T >= guard * ext:
        raise FlowError(f"horizon T={T} must stay below {guard} x extinction time {ext}")


def evolve_ricci(geom: DiscreteGeometry, T: float, dt: float) -> MetricTrajectory:
    """Integrate the Ricci flow from the geometry's initial metric up to T."""
    times, dt = uniform_grid(T, dt)
    if isinstance(geom, SphereGrid):
        _check_sphere_horizon(geom.n, geom.r0, T, SPHERE_GUARD)
        rate = -2.0 * (geom.n - 1)
        r2 = [geom.r0**2]
        y = np.array(geom.r0**2)
        for k in range(len(times) - 1):
            y = rk4_step(lambda v, t: np.full_like(v, rate), y, times[k], dt)
            if not y > 0:
                raise FlowError(f"r^2 became non-positive at t={times[k + 1]}")
            r2.append(float(y))
        return MetricTrajectory(geom, times, r2, dt)
    if isinstance(geom, FlatTorusGrid):
        a = geom.initial_state().params
        return MetricTrajectory(geom, times, [a] * len(times), dt)
    if isinstance(geom, ConformalTorusGrid):
        return _evolve_conformal(geom, times, dt)
    raise GeometryError(f"unsupported geometry {geom!r}")


def _evolve_conformal(geom: ConformalTorusGrid, times, dt) -> MetricTrajectory:
    def rhs(phi, t):
        return np.exp(-2.0 * phi) * geom.flat_laplacian(phi)

    phi = geom.phi0.copy()
    out = [phi.copy()]
    for k in range(len(times) - 1):
        t = times[k]
        for halvings in range(MAX_HALVINGS + 1):
            sub = dt / 2**halvings
            if sub <= 0.2 * min(geom.spacing) ** 2 * float(np.min(np.exp(2.0 * phi))):
                break
        else:
            raise FlowError(f"stability not restored after {MAX_HALVINGS} halvings at t={t}")
        for j in range(2**halvings):
            phi = rk4_step(rhs, phi, t + j * sub, sub)
        if not np.all(np.isfinite(phi)) or not np.all(np.exp(2.0 * phi) > 0):
            raise FlowError(f"conformal factor lost positivity at t={times[k + 1]}")
        out.append(phi.copy())
    return MetricTrajectory(geom, times, out, dt)


def exact_sphere_trajectory(n: int, r0: float, T: float, dt: float, size: int = 64) -> MetricTrajectory:
    """Closed-form shrinking sphere r^2(t) = r0^2 - 2(n-1)t on a uniform grid."""
    ext = extinction_time(n, r0)
    if not T < ext:
        raise FlowError(f"horizon T={T} must be below the extinction time {ext}")
    from .geometry import RoundSphere

    geom = SphereGrid(RoundSphere(n=n, r0=r0, size=size))
    times, dt = uniform_grid(T, dt)
    r2 = [float(r0**2 - 2.0 * (n - 1) * t) for t in times]
    return MetricTrajectory(geom, times, r2, dt)


# --------------------------------------------------------------------------
# evolution identities
# --------------------------------------------------------------------------


def time_derivative(values, dt, order: int = 2):
    """Centered differences along axis 0; second-order one-sided at the ends.

    With ``order=4`` interior nodes use the five-point stencil where available.
    """
    v = np.asarray(values, dtype=float)
    K = v.shape[0]
    if K < 3:
        raise ValueError("need at least three time nodes")
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2.0 * dt)
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt)
    d[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dt)
    if order == 4 and K >= 5:
        d[2:-2] = (-v[4:] + 8.0 * v[3:-1] - 8.0 * v[1:-3] + v[:-4]) / (12.0 * dt)
    return d


def coordinate_curvature(g: np.ndarray, spacing) -> dict:
    """Christoffel symbols and Ricci tensor of a periodic 2-D metric field.

    ``g`` has shape (2, 2, N0, N1). Everything is built from centered
    differences of the metric components, independently of any conformal
    shortcut.
    """
    ginv = np.empty_like(g)
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    ginv[0, 0], ginv[1, 1] = g[1, 1] / det, g[0, 0] / det
    ginv[0, 1] = ginv[1, 0] = -g[0, 1] / det
    dg = np.stack([_d1(g, 2 + a, spacing[a]) for a in range(2)])  # dg[l, i, j] = d_l g_ij
    # Gamma[k, i, j] = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    lower = 0.5 * (np.einsum("ijl...->lij...", dg) + np.einsum("jil...->lij...", dg) - dg)
    # lower[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    gamma = np.einsum("kl...,lij...->kij...", ginv, lower)
    dgamma = np.stack([_d1(gamma, 3 + a, spacing[a]) for a in range(2)])  # dgamma[m, k, i, j]
    ric = (
        np.einsum("kkij...->ij...", dgamma)
        - np.einsum("jkki...->ij...", dgamma)
        + np.einsum("kkl...,lij...->ij...", gamma, gamma)
        - np.einsum("kjl...,lki...->ij...", gamma, gamma)
    )
    R = np.einsum("ij...,ij...->...", ginv, ric)
    ric_up = np.einsum("ia...,jb...,ab...->ij...", ginv, ginv, ric)
    return {"g": g, "ginv": ginv, "det": det, "gamma": gamma, "ric": ric, "ric_up": ric_up, "R": R}


def _conformal_metric(phi):
    e = np.exp(2.0 * phi)
    g = np.zeros((2, 2) + phi.shape)
    g[0, 0] = g[1, 1] = e
    return g


def coordinate_hessian(f, gamma, spacing):
    d = [_d1(f, a, spacing[a]) for a in range(2)]
    hess = np.empty((2, 2) + f.shape)
    for i in range(2):
        for j in range(2):
            hess[i, j] = _d1(d[i], j, spacing[j]) if i != j else (np.roll(f, -1, i) - 2 * f + np.roll(f, 1, i)) / spacing[i] ** 2
    hess -= np.einsum("kij...,k...->ij...", gamma, np.stack(d))
    return hess


def evolution_identity_residuals(traj: MetricTrajectory, probe) -> ResidualReport:
    """Residuals of the metric-inverse, volume, scalar-curvature and Laplacian evolutions.

    Time derivatives use the fourth-order centered stencil; residuals are
    evaluated on interior nodes only (two from each end when five or more
    nodes are stored).
    """
    geom = traj.geometry
    if len(traj) < 3:
        raise FlowError("need at least three trajectory nodes")
    probe = geom.check_field(probe)
    dt = traj.dt
    K = len(traj)
    inner = slice(2, K - 2) if K >= 5 else slice(1, K - 1)
    states = traj.states()
    report = ResidualReport(meta={"family": geom.family, "grid": geom.shape, "h": geom.h, "dt": dt, "nodes": K})
    weights = np.stack([geom.volume_weights(m) for m in states])[inner]

    if isinstance(geom, ConformalTorusGrid):
        curv = [coordinate_curvature(_conformal_metric(m.params), geom.spacing) for m in states]
        ginv = np.stack([c["ginv"] for c in curv])
        g = np.stack([c["g"] for c in curv])
        ric_up = np.stack([c["ric_up"] for c in curv])
        ric = np.stack([c["ric"] for c in curv])
        R = np.stack([c["R"] for c in curv])
        sqrt_det = np.stack([np.sqrt(c["det"]) for c in curv])
        hess_probe = np.stack([coordinate_hessian(probe, c["gamma"], geom.spacing) for c in curv])
        ric_hess = np.einsum("kij...,kij...->k...", ric_up, hess_probe)
        ric_sq = np.einsum("kij...,kij...->k...", ric_up, ric)
        dginv = time_derivative(ginv, dt, order=4)
        E = dginv - 2.0 * ric_up
        res_a = np.sqrt(np.einsum("kia...,kjb...,kij...,kab...->k...", g, g, E, E))
        scale_a = float(np.max(np.abs(2.0 * ric_up)))
    else:
        R = np.stack([geom.scalar_curvature(m) for m in states])
        frame_ric = np.stack([geom.frame_ricci(m) for m in states])
        ric_sq = tensor_norm_sq(np.moveaxis(frame_ric, 0, 2))
        ric_hess = np.stack(
            [np.sum(geom.frame_ricci(m) * geom.frame_hessian(m, probe), axis=(0, 1)) for m in states]
        )
        sqrt_det = np.stack([geom.volume_weights(m) for m in states])
        if isinstance(geom, SphereGrid):
            r2 = np.array(traj.params, dtype=float)
            coef = time_derivative(1.0 / r2, dt, order=4) - 2.0 * (geom.n - 1) / r2**2
            # |E|_g for E = coef * (round unit metric inverse)
            res_a = np.abs(coef)[:, None] * r2[:, None] * math.sqrt(geom.n) * np.ones((1,) + geom.shape)
            scale_a = float(np.max(2.0 * (geom.n - 1) / r2 * math.sqrt(geom.n)))
        else:
            res_a = np.zeros((K,) + geom.shape)
            scale_a = 0.0

    lap_probe = np.stack([geom.laplacian(m, probe) for m in states])
    lap_R = np.stack([geom.laplacian(m, R[k]) for k, m in enumerate(states)])
    res_b = time_derivative(sqrt_det, dt, order=4) / sqrt_det + R
    dR = time_derivative(R, dt, order=4)
    res_c = dR - lap_R - 2.0 * ric_sq
    res_d = time_derivative(lap_probe, dt, order=4) - 2.0 * ric_hess

    report.add("metric_inverse", res_a[inner], weights, scale_a)
    report.add("volume_element", res_b[inner], weights, float(np.max(np.abs(R))))
    report.add("scalar_curvature", res_c[inner], weights, float(np.max(np.abs(dR))))
    report.add("laplacian", res_d[inner], weights, float(np.max(np.abs(2.0 * ric_hess))))
    vols = np.array([geom.volume(m) for m in states])
    dvol = time_derivative(vols, dt, order=4) + np.array([geom.integrate(m, R[k]) for k, m in enumerate(states)])
    report.add("total_volume", dvol[inner], None, float(np.max(np.abs(vols))))
    return report
