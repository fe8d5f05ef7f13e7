"""Quadrature wrappers, finite differences and small numeric kernels."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate as _integrate

from .errors import NumericalError

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-9


def integrate(f, a, b, *, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, points=None, limit=2000):
    """Adaptive Gauss-Kronrod quadrature of a scalar function on [a, b]."""
    value, abserr, ok = integrate_with_error(f, a, b, epsabs=epsabs, epsrel=epsrel,
                                             points=points, limit=limit)
    if not ok and abserr > 100 * max(epsabs, epsrel * abs(value)):
        raise NumericalError(f"quadrature on [{a}, {b}] did not converge", abserr)
    return value


def integrate_with_error(f, a, b, *, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, points=None,
                         limit=2000):
    """(value, error estimate, converged flag); raises only on a non-finite value."""
    if b <= a:
        return 0.0, 0.0, True
    kw = {}
    if points is not None:
        pts = [x for x in points if a < x < b]
        if pts:
            kw["points"] = pts
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        out = _integrate.quad(
            f, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit, full_output=1, **kw
        )
    value, abserr = out[0], out[1]
    if not math.isfinite(value):
        raise NumericalError(f"quadrature on [{a}, {b}] gave a non-finite value", abserr)
    return value, abserr, len(out) == 3


def integrate_vec(f, a, b, *, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, points=None):
    """Adaptive quadrature of a vector- or matrix-valued function on [a, b]."""
    if b <= a:
        return np.zeros(np.shape(f(a)))
    kw = {}
    if points is not None:
        pts = [x for x in points if a < x < b]
        if pts:
            kw["points"] = pts
    value, err, info = _integrate.quad_vec(
        f, a, b, epsabs=epsabs, epsrel=epsrel, norm="max", limit=20000, full_output=True, **kw
    )
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)) or (
        not info.success and err > 100 * max(epsabs, epsrel * np.max(np.abs(value)))
    ):
        raise NumericalError(f"vector quadrature on [{a}, {b}] did not converge", float(err))
    return value


def fd_step(p):
    """Central-difference steps: max(1e-6, 1e-6 |p_j|)."""
    return np.maximum(1e-6, 1e-6 * np.abs(np.asarray(p, dtype=float)))


def fd_grad(f, p):
    """Central differences of ``f(p) -> array (...)``; returns shape (..., q)."""
    p = np.asarray(p, dtype=float)
    h = fd_step(p)
    cols = []
    for j in range(p.size):
        up, dn = p.copy(), p.copy()
        up[j] += h[j]
        dn[j] -= h[j]
        cols.append((np.asarray(f(up)) - np.asarray(f(dn))) / (2 * h[j]))
    return np.stack(cols, axis=-1)


def fd_hess_from_grad(g, p):
    """Symmetrised central differences of an analytic gradient ``g(p) -> (..., q)``."""
    p = np.asarray(p, dtype=float)
    h = fd_step(p)
    cols = []
    for j in range(p.size):
        up, dn = p.copy(), p.copy()
        up[j] += h[j]
        dn[j] -= h[j]
        cols.append((np.asarray(g(up)) - np.asarray(g(dn))) / (2 * h[j]))
    H = np.stack(cols, axis=-1)
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def fd_hess(f, p):
    """Second-order central differences of ``f(p) -> array (...)``."""
    p = np.asarray(p, dtype=float)
    h = fd_step(p)
    q = p.size
    f0 = np.asarray(f(p))
    H = np.zeros(f0.shape + (q, q))
    for j in range(q):
        for k in range(j, q):
            if j == k:
                up, dn = p.copy(), p.copy()
                up[j] += h[j]
                dn[j] -= h[j]
                val = (np.asarray(f(up)) - 2 * f0 + np.asarray(f(dn))) / h[j] ** 2
            else:
                pp, pm, mp, mm = p.copy(), p.copy(), p.copy(), p.copy()
                pp[j] += h[j]; pp[k] += h[k]
                pm[j] += h[j]; pm[k] -= h[k]
                mp[j] -= h[j]; mp[k] += h[k]
                mm[j] -= h[j]; mm[k] -= h[k]
                val = (
                    np.asarray(f(pp)) - np.asarray(f(pm)) - np.asarray(f(mp)) + np.asarray(f(mm))
                ) / (4 * h[j] * h[k])
            H[..., j, k] = val
            H[..., k, j] = val
    return H


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, lo, hi, *, tol=1e-10, max_iter=200):
    """Golden-section search for a maximum of a scalar function on [lo, hi]."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = c if fc > fd else d
    return x, max(fc, fd)


def exp_moments(x, T, kmax=2):
    """Integrals of s**k * exp(x s) over [0, T] for k = 0..kmax.

    ``x`` is a scalar, ``T`` an array of nonnegative upper limits; returns an
    array of shape (kmax + 1,) + T.shape. Uses a power series for |x T| < 1
    and upward recursion otherwise.
    """
    T = np.asarray(T, dtype=float)
    shape = T.shape
    T = T.reshape(-1)
    y = x * T
    out = np.empty((kmax + 1,) + T.shape)
    small = np.abs(y) < 1.0
    phi = np.empty((kmax + 1,) + T.shape)
    if np.any(small):
        ys = y[small]
        for k in range(kmax + 1):
            term = np.ones_like(ys)
            acc = term / (k + 1)
            for n in range(1, 40):
                term = term * ys / n
                acc = acc + term / (n + k + 1)
            phi[k][small] = acc
    big = ~small
    if np.any(big):
        yb = y[big]
        ey = np.exp(yb)
        prev = np.expm1(yb) / yb
        phi[0][big] = prev
        for k in range(1, kmax + 1):
            prev = (ey - k * prev) / yb
            phi[k][big] = prev
    for k in range(kmax + 1):
        out[k] = T ** (k + 1) * phi[k]
    return out.reshape((kmax + 1,) + shape)


def pairwise_sum(values):
    """Fixed-order reduction (numpy's pairwise summation on a contiguous copy)."""
    return float(np.sum(np.ascontiguousarray(values, dtype=float)))
