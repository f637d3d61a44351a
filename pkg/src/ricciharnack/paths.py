"""
Space-time path actions and their minimization.

The action of a discrete path x_0, ..., x_m-1 over times t_0 < ... < t_m-1 is

    sum_k |x_{k+1} - x_k|^2_{g(t_mid)} / (t_{k+1} - t_k),

evaluated with the metric at each segment's midpoint. Minimization is by
over-relaxed coordinate descent over the interior nodes; a move is accepted only if it
lowers the action, so the recorded action history never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .geometry import ConformalTorusGrid, FlatTorusGrid, SphereGrid, _wrap

DEFAULT_NODES = 33
MAX_SWEEPS = 200
SWEEP_TOL = 1e-10


@dataclass
class DiscretePath:
    s: np.ndarray
    points: np.ndarray  # (m, dim)
    times: np.ndarray

    def __post_init__(self):
        if len(self.s) < 3:
            raise ValueError("a discrete path needs at least three nodes")

    def reversed(self) -> "DiscretePath":
        return DiscretePath(self.s, self.points[::-1].copy(), self.times)


@dataclass
class ActionResult:
    value: float
    path: DiscretePath
    sweeps: int
    converged: bool
    history: list = field(default_factory=list)


def _metric_source(traj_or_fn):
    if callable(traj_or_fn):
        return traj_or_fn
    return traj_or_fn.state_at


def unwrap_endpoint(geom, x1, x2):
    """Coordinates of the image of x2 nearest to x1 (periodic directions only)."""
    x1 = np.ravel(np.asarray(x1, dtype=float))
    x2 = np.ravel(np.asarray(x2, dtype=float))
    if isinstance(geom, SphereGrid):
        return x1[:1], x2[:1]
    lengths = np.asarray(geom.lengths)
    return x1, x1 + _wrap(x2 - x1, lengths)


class _SegmentMetric:
    """Diagonal metric coefficients a_i(x, t) sampled at segment midpoints."""

    def __init__(self, geom, metric_at, mid_times):
        self.geom = geom
        self.uniform = not isinstance(geom, ConformalTorusGrid)
        states = [metric_at(float(t)) for t in mid_times]
        if isinstance(geom, SphereGrid):
            self.coef = np.array([[m.params] for m in states])
        elif isinstance(geom, FlatTorusGrid):
            self.coef = np.array([list(m.params) for m in states])
        else:
            self.phis = [np.exp(2.0 * m.params) for m in states]

    def at(self, seg, xmid):
        if self.uniform:
            return self.coef[seg]
        geom = self.geom
        idx = [[xmid[i] / geom.spacing[i]] for i in range(2)]
        e = float(map_coordinates(self.phis[seg], idx, order=3, mode="grid-wrap")[0])
        return np.array([e, e])


def _segment_action(metric, seg, a, b, dt):
    d = b - a
    coef = metric.at(seg, 0.5 * (a + b))
    return float(np.sum(coef * d * d) / dt)


def path_action(metric, path: DiscretePath) -> float:
    dts = np.diff(path.times)
    return sum(_segment_action(metric, k, path.points[k], path.points[k + 1], dts[k]) for k in range(len(dts)))


def straight_path(x1, x2, t1, t2, m) -> DiscretePath:
    s = np.linspace(0.0, 1.0, m)
    pts = x1[None, :] + s[:, None] * (x2 - x1)[None, :]
    return DiscretePath(s, pts, t1 + s * (t2 - t1))


def theta_action(
    traj,
    x1,
    t1: float,
    x2,
    t2: float,
    m: int = DEFAULT_NODES,
    initial: DiscretePath | None = None,
    max_sweeps: int = MAX_SWEEPS,
    tol: float = SWEEP_TOL,
) -> ActionResult:
    """Upper approximation of inf over paths of int_{t1}^{t2} |gamma'(t)|^2_{g(t)} dt.

    ``traj`` is a :class:`MetricTrajectory` or a callable ``t -> MetricState``.
    Endpoints are fixed; on tori the end point is taken as the image nearest
    to ``x1``.
    """
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    if m < 8:
        raise ValueError("path resolution must be at least 8 nodes")
    metric_at = _metric_source(traj)
    geom = metric_at(float(t1)).geometry
    a, b = unwrap_endpoint(geom, x1, x2)
    if initial is None:
        path = straight_path(a, b, float(t1), float(t2), m)
    else:
        path = DiscretePath(initial.s.copy(), np.array(initial.points, dtype=float), initial.times.copy())
        if initial.points[0].shape != a.shape:
            raise ValueError("initial path dimension does not match the geometry")
        path.points[0], path.points[-1] = a, b
        m = len(path.s)
    mids = 0.5 * (path.times[1:] + path.times[:-1])
    metric = _SegmentMetric(geom, metric_at, mids)
    dts = np.diff(path.times)
    pts = path.points
    value = path_action(metric, path)
    history = [value]
    if np.allclose(a, b) and initial is None:
        return ActionResult(value, path, 0, True, history)
    converged = False
    sweeps = 0
    omega = 2.0 / (1.0 + np.sin(np.pi / m))
    for sweeps in range(1, max_sweeps + 1):
        for j in range(1, m - 1):
            for i in range(pts.shape[1]):
                old = pts[j, i]
                before = _local(metric, pts, dts, j, i, old)
                # coefficients frozen at the current segment midpoints
                cl = metric.at(j - 1, 0.5 * (pts[j - 1] + pts[j]))[i] / dts[j - 1]
                cr = metric.at(j, 0.5 * (pts[j] + pts[j + 1]))[i] / dts[j]
                target = (cl * pts[j - 1, i] + cr * pts[j + 1, i]) / (cl + cr)
                for cand in (old + omega * (target - old), target):
                    if _local(metric, pts, dts, j, i, cand) < before:
                        pts[j, i] = cand
                        break
        new = path_action(metric, path)
        if new > history[-1]:
            # accepted moves are strict local improvements; guard against round-off
            new = history[-1]
        history.append(new)
        if history[-2] - new < tol:
            converged = True
            break
    return ActionResult(history[-1], path, sweeps, converged, history)


def _local(metric, pts, dts, j, i, v):
    a = pts[j].copy()
    a[i] = v
    return _segment_action(metric, j - 1, pts[j - 1], a, dts[j - 1]) + _segment_action(metric, j, a, pts[j + 1], dts[j])


def sphere_theta_closed_form(r2_of_t, theta1, t1, theta2, t2, samples: int = 4097) -> float:
    """Exact meridian action on a homothetically shrinking sphere: dtheta^2 / int dt / r^2."""
    t = np.linspace(t1, t2, samples)
    inv = 1.0 / np.asarray([r2_of_t(v) for v in t])
    from scipy.integrate import simpson

    return (theta2 - theta1) ** 2 / float(simpson(inv, x=t))


def path_average(values_at, path: DiscretePath) -> tuple[float, float]:
    """(sup, integral over s in [0, 1]) of a scalar sampled along the path."""
    vals = np.array([values_at(p, t) for p, t in zip(path.points, path.times)])
    return float(np.max(vals)), float(np.trapezoid(vals, path.s))


def interpolate_field(geom, field_values, point) -> float:
    """Periodic cubic interpolation on tori; linear on the sphere's polar grid."""
    point = np.ravel(point)
    if isinstance(geom, SphereGrid):
        return float(np.interp(point[0], geom.theta, field_values))
    idx = [[point[i] / geom.spacing[i]] for i in range(geom.n)]
    return float(map_coordinates(field_values, idx, order=3, mode="grid-wrap")[0])

