"""
Model geometries, metric states and discrete differential operators.

Three families are supported:

- ``RoundSphere``: rotationally symmetric fields on S^n, sampled on a
  half-cell-offset polar grid that excludes both poles.
- ``FlatTorus``: n-dimensional periodic grid with a constant diagonal metric.
- ``ConformalTorus2D``: periodic 2-D grid with metric ``exp(2 phi) * (dx^2 + dy^2)``.

Fields are plain numpy arrays shaped like ``geometry.shape``. Tensors are
returned in an orthonormal frame with shape ``(k, k) + geometry.shape`` so that
norms and traces are plain sums over the leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

TWO_PI = 2.0 * math.pi
MIN_GRID = 8


class GeometryError(ValueError):
    """Raised for invalid geometry specifications or mismatched fields."""


# --------------------------------------------------------------------------
# specifications
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundSphere:
    n: int = 2
    r0: float = 1.0
    size: int = 256


@dataclass(frozen=True)
class FlatTorus:
    n: int = 2
    lengths: tuple = (TWO_PI, TWO_PI)
    sizes: tuple = (64, 64)


@dataclass(frozen=True)
class ConformalTorus2D:
    sizes: tuple = (64, 64)
    # array of shape `sizes` or callable phi0(x, y) evaluated on the grid
    phi0: Union[np.ndarray, Callable, float] = 0.0
    lengths: tuple = (TWO_PI, TWO_PI)


ModelGeometry = Union[RoundSphere, FlatTorus, ConformalTorus2D]


@dataclass(frozen=True, eq=False)
class MetricState:
    """Metric at one instant.

    ``params`` is ``r^2`` (float) on the sphere, the tuple of diagonal
    coefficients on the flat torus, and the conformal factor array ``phi`` on
    the conformal torus.
    """

    geometry: "DiscreteGeometry"
    t: float
    params: object

    def __post_init__(self):
        self.geometry.check_params(self.params)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _sin_power_integral(x: np.ndarray, m: int) -> np.ndarray:
    """Integral of sin^m from 0 to x (reduction formula)."""
    x = np.asarray(x, dtype=float)
    if m == 0:
        return x.copy()
    if m == 1:
        return 1.0 - np.cos(x)
    return (-np.sin(x) ** (m - 1) * np.cos(x)) / m + (m - 1) / m * _sin_power_integral(x, m - 2)


def unit_sphere_area(k: int) -> float:
    """Area of the unit k-sphere S^k in R^{k+1}."""
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def _d1(f, axis, h):
    return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)


def _d2(f, axis, h):
    return (np.roll(f, -1, axis) - 2.0 * f + np.roll(f, 1, axis)) / h**2


def _d2_wide(f, axis, h):
    return (np.roll(f, -2, axis) - 2.0 * f + np.roll(f, 2, axis)) / (4.0 * h**2)


def _wrap(dx, length):
    return dx - length * np.round(dx / length)


# --------------------------------------------------------------------------
# discrete geometries
# --------------------------------------------------------------------------


class DiscreteGeometry:
    """Common surface of the three discretized families."""

    family: str
    n: int
    shape: tuple
    h: float

    def check_field(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise GeometryError(f"field shape {f.shape} does not match grid {self.shape}")
        return f

    def state(self, params, t: float = 0.0) -> MetricState:
        return MetricState(self, float(t), params)

    def grad_norm_sq(self, m: MetricState, f) -> np.ndarray:
        g = self.frame_gradient(m, f)
        return np.sum(g * g, axis=0)

    def inner_grad(self, m: MetricState, f, v) -> np.ndarray:
        """<grad f, grad v> pointwise."""
        return np.sum(self.frame_gradient(m, f) * self.frame_gradient(m, v), axis=0)

    def integrate(self, m: MetricState, f) -> float:
        f = self.check_field(f)
        return float(np.sum(f * self.volume_weights(m)))

    def volume(self, m: MetricState) -> float:
        return float(np.sum(self.volume_weights(m)))

    def frame_metric(self) -> np.ndarray:
        k = self.frame_dim
        eye = np.eye(k).reshape((k, k) + (1,) * len(self.shape))
        return np.broadcast_to(eye, (k, k) + self.shape)

    @property
    def frame_dim(self) -> int:
        return self.n

    def stable_dt(self, m: MetricState, advection: float = 0.0) -> float:
        """Explicit RK4 step bound for diffusion plus advection at speed `advection`."""
        lam = self.laplacian_radius(m)
        return 1.6 / (lam + 2.0 * advection / self.min_spacing(m))


class SphereGrid(DiscreteGeometry):
    family = "sphere"

    def __init__(self, spec: RoundSphere):
        if spec.n < 2:
            raise GeometryError("sphere dimension must be >= 2")
        if spec.size < MIN_GRID:
            raise GeometryError(f"grid size {spec.size} < {MIN_GRID}")
        if not spec.r0 > 0:
            raise GeometryError("sphere radius must be positive")
        self.spec = spec
        self.n = int(spec.n)
        self.r0 = float(spec.r0)
        N = int(spec.size)
        self.shape = (N,)
        self.h = math.pi / N
        self.theta = (np.arange(N) + 0.5) * self.h
        self.coords = (self.theta,)
        faces = np.arange(N + 1) * self.h
        self._face_w = np.sin(faces) ** (self.n - 1)
        self._face_w[0] = self._face_w[-1] = 0.0
        # exact cell integrals of sin^{n-1}: makes the quadrature exact for constants
        self._cell_vol = np.diff(_sin_power_integral(faces, self.n - 1))
        self._omega = unit_sphere_area(self.n - 1)
        self._cot = np.cos(self.theta) / np.sin(self.theta)

    def initial_state(self) -> MetricState:
        return self.state(self.r0**2, 0.0)

    def check_params(self, r2):
        if not (np.isfinite(r2) and r2 > 0):
            raise GeometryError(f"sphere r^2 must be positive, got {r2}")

    def _ghost(self, f):
        # even reflection across both poles encodes f_theta = 0 there
        return np.concatenate([f[:1], f, f[-1:]])

    def dtheta(self, f):
        fp = self._ghost(f)
        return (fp[2:] - fp[:-2]) / (2.0 * self.h)

    def dtheta2(self, f):
        fp = self._ghost(f)
        return (fp[2:] - 2.0 * f + fp[:-2]) / self.h**2

    def laplacian(self, m: MetricState, f) -> np.ndarray:
        f = self.check_field(f)
        fp = self._ghost(f)
        flux = self._face_w * (fp[1:] - fp[:-1]) / self.h
        return (flux[1:] - flux[:-1]) / (self._cell_vol * m.params)

    def laplacian_wide(self, m: MetricState, f) -> np.ndarray:
        """Second-order Laplacian on a 2h stencil, independent of :meth:`laplacian`."""
        f = self.check_field(f)
        fp = np.concatenate([f[1::-1], f, f[:-3:-1]])
        d2 = (fp[4:] - 2.0 * f + fp[:-4]) / (4.0 * self.h**2)
        return (d2 + (self.n - 1) * self._cot * self.dtheta(f)) / m.params

    def laplacian_radius(self, m):
        rows = 2.0 * (self._face_w[1:] + self._face_w[:-1]) / (self._cell_vol * self.h)
        return float(np.max(rows)) / m.params

    def min_spacing(self, m):
        return self.h * math.sqrt(m.params)

    def frame_gradient(self, m, f):
        f = self.check_field(f)
        out = np.zeros((self.n,) + self.shape)
        out[0] = self.dtheta(f) / math.sqrt(m.params)
        return out

    def frame_hessian(self, m, f):
        f = self.check_field(f)
        out = np.zeros((self.n, self.n) + self.shape)
        out[0, 0] = self.dtheta2(f) / m.params
        tangential = self._cot * self.dtheta(f) / m.params
        for a in range(1, self.n):
            out[a, a] = tangential
        return out

    def frame_ricci(self, m):
        k = (self.n - 1) / m.params
        return k * np.array(self.frame_metric())

    def scalar_curvature(self, m) -> np.ndarray:
        return np.full(self.shape, self.n * (self.n - 1) / m.params)

    def volume_weights(self, m) -> np.ndarray:
        return m.params ** (self.n / 2) * self._omega * self._cell_vol

    def distance(self, m, x, y) -> float:
        a, b = float(np.ravel(x)[0]), float(np.ravel(y)[0])
        return math.sqrt(m.params) * abs(a - b)

    def distance_field(self, m, p) -> np.ndarray:
        p = float(np.ravel(p)[0])
        return math.sqrt(m.params) * np.abs(self.theta - p)

    def near_cut_locus(self, x, p, cells: int = 3) -> bool:
        sep = abs(float(np.ravel(x)[0]) - float(np.ravel(p)[0]))
        return sep > math.pi - cells * self.h

    def node_point(self, index):
        return (float(self.theta[int(np.ravel(index)[0])]),)

    def nearest_index(self, x):
        j = int(np.clip(np.floor(float(np.ravel(x)[0]) / self.h), 0, self.shape[0] - 1))
        return (j,)


class FlatTorusGrid(DiscreteGeometry):
    family = "flat_torus"

    def __init__(self, spec: FlatTorus):
        n = int(spec.n)
        if n < 1:
            raise GeometryError("torus dimension must be >= 1")
        lengths = tuple(float(v) for v in spec.lengths)
        sizes = tuple(int(v) for v in spec.sizes)
        if len(lengths) != n or len(sizes) != n:
            raise GeometryError("lengths and sizes must have one entry per dimension")
        if any(s < MIN_GRID for s in sizes):
            raise GeometryError(f"grid sizes {sizes} contain a size < {MIN_GRID}")
        if any(not L > 0 for L in lengths):
            raise GeometryError("side lengths must be positive")
        self.spec = spec
        self.n = n
        self.lengths = lengths
        self.sizes = sizes
        self.shape = sizes
        self.spacing = tuple(L / N for L, N in zip(lengths, sizes))
        self.h = max(self.spacing)
        axes = [np.arange(N) * dx for N, dx in zip(sizes, self.spacing)]
        self.coords = tuple(np.meshgrid(*axes, indexing="ij"))

    def initial_state(self) -> MetricState:
        return self.state(tuple([1.0] * self.n), 0.0)

    def check_params(self, a):
        a = tuple(a)
        if len(a) != self.n or not all(np.isfinite(v) and v > 0 for v in a):
            raise GeometryError(f"flat metric coefficients must be {self.n} positive numbers")

    def laplacian(self, m, f):
        f = self.check_field(f)
        return sum(_d2(f, i, self.spacing[i]) / m.params[i] for i in range(self.n))

    def laplacian_wide(self, m, f):
        f = self.check_field(f)
        return sum(_d2_wide(f, i, self.spacing[i]) / m.params[i] for i in range(self.n))

    def laplacian_radius(self, m):
        return sum(4.0 / (m.params[i] * self.spacing[i] ** 2) for i in range(self.n))

    def min_spacing(self, m):
        return min(math.sqrt(m.params[i]) * self.spacing[i] for i in range(self.n))

    def frame_gradient(self, m, f):
        f = self.check_field(f)
        return np.stack([_d1(f, i, self.spacing[i]) / math.sqrt(m.params[i]) for i in range(self.n)])

    def frame_hessian(self, m, f):
        f = self.check_field(f)
        out = np.empty((self.n, self.n) + self.shape)
        for i in range(self.n):
            out[i, i] = _d2(f, i, self.spacing[i]) / m.params[i]
            for j in range(i + 1, self.n):
                mixed = _d1(_d1(f, i, self.spacing[i]), j, self.spacing[j])
                out[i, j] = out[j, i] = mixed / math.sqrt(m.params[i] * m.params[j])
        return out

    def frame_ricci(self, m):
        return np.zeros((self.n, self.n) + self.shape)

    def scalar_curvature(self, m):
        return np.zeros(self.shape)

    def volume_weights(self, m):
        cell = math.prod(self.spacing) * math.sqrt(math.prod(m.params))
        return np.full(self.shape, cell)

    def distance(self, m, x, y) -> float:
        x, y = np.ravel(x).astype(float), np.ravel(y).astype(float)
        d2 = sum(m.params[i] * _wrap(y[i] - x[i], self.lengths[i]) ** 2 for i in range(self.n))
        return math.sqrt(d2)

    def distance_field(self, m, p):
        p = np.ravel(p).astype(float)
        d2 = sum(m.params[i] * _wrap(self.coords[i] - p[i], self.lengths[i]) ** 2 for i in range(self.n))
        return np.sqrt(d2)

    def near_cut_locus(self, x, p, cells: int = 3) -> bool:
        x, p = np.ravel(x).astype(float), np.ravel(p).astype(float)
        for i in range(self.n):
            gap = self.lengths[i] / 2 - abs(_wrap(x[i] - p[i], self.lengths[i]))
            if gap < cells * self.spacing[i]:
                return True
        return False

    def node_point(self, index):
        return tuple(float(int(k) % N) * dx for k, N, dx in zip(np.ravel(index), self.sizes, self.spacing))

    def nearest_index(self, x):
        x = np.ravel(x).astype(float)
        return tuple(int(round(x[i] / self.spacing[i])) % self.sizes[i] for i in range(self.n))


class ConformalTorusGrid(DiscreteGeometry):
    family = "conformal_torus"

    def __init__(self, spec: ConformalTorus2D):
        sizes = tuple(int(v) for v in spec.sizes)
        lengths = tuple(float(v) for v in spec.lengths)
        if len(sizes) != 2 or len(lengths) != 2:
            raise GeometryError("conformal torus is two-dimensional")
        if any(s < MIN_GRID for s in sizes):
            raise GeometryError(f"grid sizes {sizes} contain a size < {MIN_GRID}")
        if any(not L > 0 for L in lengths):
            raise GeometryError("side lengths must be positive")
        self.spec = spec
        self.n = 2
        self.sizes = sizes
        self.lengths = lengths
        self.shape = sizes
        self.spacing = tuple(L / N for L, N in zip(lengths, sizes))
        self.h = max(self.spacing)
        axes = [np.arange(N) * dx for N, dx in zip(sizes, self.spacing)]
        self.coords = tuple(np.meshgrid(*axes, indexing="ij"))
        phi0 = spec.phi0
        if callable(phi0):
            phi0 = phi0(*self.coords)
        phi0 = np.broadcast_to(np.asarray(phi0, dtype=float), self.shape).copy()
        self.phi0 = phi0
        self.check_params(phi0)
        self._graph_edges = self._build_edges()

    def initial_state(self) -> MetricState:
        return self.state(self.phi0, 0.0)

    def check_params(self, phi):
        phi = np.asarray(phi)
        if phi.shape != self.shape or not np.all(np.isfinite(phi)):
            raise GeometryError("conformal factor must be a finite field on the grid")
        if not np.all(np.exp(2.0 * phi) > 0):
            raise GeometryError("conformal metric lost positive definiteness")

    def flat_laplacian(self, f):
        return _d2(f, 0, self.spacing[0]) + _d2(f, 1, self.spacing[1])

    def laplacian(self, m, f):
        f = self.check_field(f)
        return np.exp(-2.0 * m.params) * self.flat_laplacian(f)

    def laplacian_wide(self, m, f):
        f = self.check_field(f)
        wide = _d2_wide(f, 0, self.spacing[0]) + _d2_wide(f, 1, self.spacing[1])
        return np.exp(-2.0 * m.params) * wide

    def laplacian_radius(self, m):
        flat = 4.0 / self.spacing[0] ** 2 + 4.0 / self.spacing[1] ** 2
        return flat * float(np.max(np.exp(-2.0 * m.params)))

    def min_spacing(self, m):
        return min(self.spacing) * float(np.min(np.exp(m.params)))

    def frame_gradient(self, m, f):
        f = self.check_field(f)
        scale = np.exp(-m.params)
        return np.stack([_d1(f, i, self.spacing[i]) * scale for i in range(2)])

    def frame_hessian(self, m, f):
        f = self.check_field(f)
        phi = m.params
        hx, hy = self.spacing
        fx, fy = _d1(f, 0, hx), _d1(f, 1, hy)
        px, py = _d1(phi, 0, hx), _d1(phi, 1, hy)
        # Hess_ij = d_i d_j f - Gamma^k_ij d_k f with Gamma from g = e^{2 phi} delta
        hxx = _d2(f, 0, hx) - px * fx + py * fy
        hyy = _d2(f, 1, hy) - py * fy + px * fx
        hxy = _d1(fx, 1, hy) - (py * fx + px * fy)
        scale = np.exp(-2.0 * phi)
        return np.stack([np.stack([hxx, hxy]), np.stack([hxy, hyy])]) * scale

    def frame_ricci(self, m):
        half_r = 0.5 * self.scalar_curvature(m)
        out = np.zeros((2, 2) + self.shape)
        out[0, 0] = out[1, 1] = half_r
        return out

    def scalar_curvature(self, m):
        return -2.0 * np.exp(-2.0 * m.params) * self.flat_laplacian(m.params)

    def volume_weights(self, m):
        return np.exp(2.0 * m.params) * (self.spacing[0] * self.spacing[1])

    # -- graph distance ---------------------------------------------------

    def _build_edges(self):
        N0, N1 = self.sizes
        idx = np.arange(N0 * N1).reshape(N0, N1)
        hx, hy = self.spacing
        src, dst, length = [], [], []
        for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
            src.append(idx.ravel())
            dst.append(np.roll(idx, (-di, -dj), axis=(0, 1)).ravel())
            length.append(np.full(N0 * N1, math.hypot(di * hx, dj * hy)))
        return np.concatenate(src), np.concatenate(dst), np.concatenate(length)

    def edge_weights(self, m):
        src, dst, length = self._graph_edges
        ephi = np.exp(m.params).ravel()
        return length * 0.5 * (ephi[src] + ephi[dst])

    def _graph(self, m):
        src, dst, _ = self._graph_edges
        size = self.sizes[0] * self.sizes[1]
        return coo_matrix((self.edge_weights(m), (src, dst)), shape=(size, size)).tocsr()

    def shortest_paths(self, m, source_index):
        """Dijkstra distances and predecessors from one grid node."""
        src = np.ravel_multi_index(tuple(int(v) for v in source_index), self.sizes)
        dist, pred = dijkstra(self._graph(m), directed=False, indices=src, return_predecessors=True)
        return dist.reshape(self.sizes), pred

    def path_nodes(self, pred, source_index, target_index):
        src = np.ravel_multi_index(tuple(int(v) for v in source_index), self.sizes)
        node = np.ravel_multi_index(tuple(int(v) for v in target_index), self.sizes)
        out = [node]
        while node != src:
            node = pred[node]
            if node < 0:
                raise GeometryError("target unreachable in distance graph")
            out.append(node)
        return np.array(out[::-1])

    def distance(self, m, x, y) -> float:
        dist, _ = self.shortest_paths(m, self.nearest_index(x))
        return float(dist[self.nearest_index(y)])

    def distance_field(self, m, p):
        dist, _ = self.shortest_paths(m, self.nearest_index(p))
        return dist

    def near_cut_locus(self, x, p, cells: int = 3) -> bool:
        x, p = np.ravel(x).astype(float), np.ravel(p).astype(float)
        for i in range(2):
            gap = self.lengths[i] / 2 - abs(_wrap(x[i] - p[i], self.lengths[i]))
            if gap < cells * self.spacing[i]:
                return True
        return False

    def node_point(self, index):
        return tuple(float(int(k) % N) * dx for k, N, dx in zip(np.ravel(index), self.sizes, self.spacing))

    def nearest_index(self, x):
        x = np.ravel(x).astype(float)
        return tuple(int(round(x[i] / self.spacing[i])) % self.sizes[i] for i in range(2))


def build_geometry(spec: ModelGeometry) -> DiscreteGeometry:
    """Discretize a model geometry; rejects grids below 8 nodes per axis."""
    if isinstance(spec, RoundSphere):
        return SphereGrid(spec)
    if isinstance(spec, FlatTorus):
        return FlatTorusGrid(spec)
    if isinstance(spec, ConformalTorus2D):
        return ConformalTorusGrid(spec)
    raise GeometryError(f"unknown geometry specification {spec!r}")


# --------------------------------------------------------------------------
# module-level operations
# --------------------------------------------------------------------------


def laplace_beltrami(m: MetricState, f) -> np.ndarray:
    """Second-order discretization of |g|^{-1/2} d_i(|g|^{1/2} g^{ij} d_j f)."""
    return m.geometry.laplacian(m, f)


def grad_norm_sq(m: MetricState, f) -> np.ndarray:
    return m.geometry.grad_norm_sq(m, f)


def scalar_curvature(m: MetricState) -> np.ndarray:
    return m.geometry.scalar_curvature(m)


def integrate(m: MetricState, f) -> float:
    return m.geometry.integrate(m, f)


def geodesic_distance(m: MetricState, x, y) -> float:
    return m.geometry.distance(m, x, y)


def tensor_norm_sq(t: np.ndarray) -> np.ndarray:
    """|T|^2 for a frame tensor of shape (k, k, ...)."""
    return np.sum(t * t, axis=(0, 1))


def tensor_trace(t: np.ndarray) -> np.ndarray:
    return np.trace(t, axis1=0, axis2=1)


def contract(t: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """T(a, b) for frame tensor T and frame vectors a, b."""
    return np.einsum("ij...,i...,j...->...", t, a, b)


def min_ricci_eigenvalue(m: MetricState) -> np.ndarray:
    ric = m.geometry.frame_ricci(m)
    k = ric.shape[0]
    mats = np.moveaxis(ric.reshape(k, k, -1), -1, 0)
    return np.linalg.eigvalsh(mats).min(axis=1).reshape(m.geometry.shape)


# --------------------------------------------------------------------------
# CSV import/export
# --------------------------------------------------------------------------


def field_to_rows(geom: DiscreteGeometry, values) -> list:
    values = geom.check_field(values)
    coords = [c.ravel() for c in geom.coords]
    return [[*(float(c[i]) for c in coords), float(v)] for i, v in enumerate(values.ravel())]


def save_field_csv(path, geom: DiscreteGeometry, values, name: str = "value") -> None:
    import csv

    header = [f"x{i}" for i in range(len(geom.coords))] + [name]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in field_to_rows(geom, values):
            writer.writerow([repr(v) for v in row])


def load_field_csv(path, geom: DiscreteGeometry) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != math.prod(geom.shape):
        raise GeometryError(f"{path}: expected {math.prod(geom.shape)} rows, found {data.shape[0]}")
    coords = np.stack([c.ravel() for c in geom.coords], axis=1)
    if not np.allclose(data[:, :-1], coords):
        raise GeometryError(f"{path}: node coordinates do not match the grid")
    return data[:, -1].reshape(geom.shape)
