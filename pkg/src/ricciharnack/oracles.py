"""
Closed-form references used to check the solvers.

The torus heat kernel is the lattice sum of Euclidean Gaussians; terms are
added until they fall below 1e-14 of the leading one, and all sums are done
in log space so that small kernel times do not underflow.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

LATTICE_CUTOFF = 1e-14


def _lattice_images(x, length, a, s):
    """Signed displacements x - k L for all images within the cutoff."""
    reach = math.sqrt(4.0 * s * -math.log(LATTICE_CUTOFF) / a) + length
    kmax = int(math.ceil(reach / length)) + 1
    ks = np.arange(-kmax, kmax + 1)
    return x[..., None] - ks * length


def log_kernel_1d(x, length, a, s):
    """log of the 1-D periodized kernel for metric ``a dx^2`` at time s, and its
    first and second x-derivatives."""
    y = _lattice_images(np.asarray(x, dtype=float), length, a, s)
    expo = -a * y**2 / (4.0 * s)
    lse = logsumexp(expo, axis=-1)
    weights = np.exp(expo - lse[..., None])
    slope = -a * y / (2.0 * s)
    d1 = np.sum(weights * slope, axis=-1)
    d2 = np.sum(weights * (slope**2 - a / (2.0 * s)), axis=-1) - d1**2
    return lse - 0.5 * math.log(4.0 * math.pi * s), d1, d2


def torus_heat_kernel(geom, state, center, s):
    """Heat kernel of a flat torus at time s, centered at ``center``.

    Returns ``(log_u, grad, hess_diag)`` with coordinate derivatives of log u;
    ``grad[i]`` and ``hess_diag[i]`` are d_i log u and d_ii log u.
    """
    center = np.ravel(center).astype(float)
    a = state.params
    log_u = np.zeros(geom.shape)
    grad, hess = [], []
    for i in range(geom.n):
        lk, d1, d2 = log_kernel_1d(geom.coords[i] - center[i], geom.lengths[i], a[i], s)
        # normalization per axis w.r.t. the Riemannian volume sqrt(a) dx
        log_u += lk
        grad.append(d1)
        hess.append(d2)
    return log_u, np.stack(grad), np.stack(hess)


def torus_kernel_harnack(geom, state, center, s):
    """Exact Harnack quantity of the torus heat kernel, with tau = s."""
    log_u, grad, hess = torus_heat_kernel(geom, state, center, s)
    a = np.asarray(state.params, dtype=float).reshape((-1,) + (1,) * geom.n)
    lap = np.sum(hess / a, axis=0)
    gsq = np.sum(grad**2 / a, axis=0)
    return -2.0 * lap - gsq - 2.0 * geom.n / s


def euclidean_kernel_harnack(n, d, tau):
    """-n/tau - d^2/(4 tau^2): Harnack quantity of the Euclidean heat kernel."""
    return -n / tau - np.asarray(d) ** 2 / (4.0 * tau**2)


def sphere_constant_solution(n, r0, u1, t1, t):
    """Spatially constant conjugate-heat solution on the shrinking sphere."""
    r2 = lambda s: r0**2 - 2.0 * (n - 1) * s  # noqa: E731
    return u1 * (r2(t1) / r2(np.asarray(t, dtype=float))) ** (n / 2)


def sphere_mode_solution(n, r0, c1, b1, t1, t):
    """u = c(t) + b(t) cos(theta) solving the conjugate heat equation on the shrinking sphere.

    The constant and first-harmonic coefficients obey
    c_tau = -R c and b_tau = -(n / r^2) b - R b, integrated in closed form.
    """
    t = np.asarray(t, dtype=float)
    r2_1 = r0**2 - 2.0 * (n - 1) * t1
    r2 = r0**2 - 2.0 * (n - 1) * t
    ratio = r2_1 / r2
    c = c1 * ratio ** (n / 2)
    # int_t^{t1} n / r^2(s) ds = n / (2(n-1)) log(r2(t) / r2(t1))
    b = b1 * ratio ** (n / 2) * (r2 / r2_1) ** (-n / (2.0 * (n - 1)))
    return c, b
