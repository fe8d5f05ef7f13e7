"""BFGS with backtracking (Armijo) line search.

The objective is minimised in working coordinates ``u``. Convergence is
judged on a caller-supplied gradient measure (usually the score on the
natural parameter scale), so that a log-reparameterised parameter drifting
to the boundary of its domain is not mistaken for a stationary point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    gradient_norm: float
    iterations: int
    converged: bool
    message: str


def rounding_gradient_tolerance(f):
    """Gradient size accepted alongside a relative objective change stop."""
    return 1e-6 * max(1.0, abs(f))


def _safe_inverse(H):
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    top = max(np.max(np.abs(w)), 1e-300)
    w = np.maximum(np.abs(w), 1e-10 * top)
    return (V / w) @ V.T


def precondition(hess):
    """Inverse of an (approximate) Hessian, made positive definite."""
    H = np.array(hess, dtype=float)
    d = np.diag(H).copy()
    scale = np.max(np.abs(d)) if d.size else 1.0
    for j in range(H.shape[0]):
        if not d[j] > 1e-12 * scale:
            H[j, :] = 0.0
            H[:, j] = 0.0
            H[j, j] = 1.0
    return _safe_inverse(H)


def bfgs(
    fun,
    x0,
    *,
    hess_inv0=None,
    gtol=1e-8,
    ftol=1e-12,
    max_iter=500,
    grad_measure=None,
    at_boundary=None,
):
    """Minimise ``fun(u) -> (f, g)``; ``f`` may be ``inf`` outside the domain.

    ``grad_measure(u, g)`` returns the sup-norm used for the convergence test
    (defaults to ``max|g|``). ``at_boundary(u)`` returning True stops the
    iteration as non-converged.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    measure = grad_measure or (lambda u, g: float(np.max(np.abs(g))) if g.size else 0.0)
    f, g = fun(x)
    if not np.isfinite(f):
        return OptimizeResult(x, f, g, np.inf, 0, False, "objective not finite at initial point")
    H0 = np.eye(n) if hess_inv0 is None else np.array(hess_inv0, dtype=float)
    H = H0.copy()
    scaled = hess_inv0 is not None
    gnorm = measure(x, g)
    message = "maximum number of iterations reached"
    converged = False
    it = 0
    retried = False
    for it in range(1, max_iter + 1):
        if gnorm <= gtol:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        d = -H @ g
        slope = float(g @ d)
        if not slope < 0:
            H = H0.copy()
            d = -H @ g
            slope = float(g @ d)
        step = 1.0
        accepted = False
        for _ in range(80):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if not retried:
                retried = True
                H = H0.copy()
                continue
            if gnorm <= rounding_gradient_tolerance(f):
                converged, message = True, "no further decrease possible (rounding level)"
            else:
                message = "line search failed"
            break
        retried = False
        s = x_new - x
        y = g_new - g
        df = f - f_new
        x, f, g = x_new, f_new, g_new
        gnorm = measure(x, g)
        if at_boundary is not None and at_boundary(x):
            message = "parameter approaches the boundary of its domain"
            break
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = np.eye(n) * sy / float(y @ y)
                scaled = True
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        if gnorm <= gtol:
            converged, message = True, "gradient tolerance reached"
            break
        if abs(df) <= ftol * max(1.0, abs(f)) and gnorm <= rounding_gradient_tolerance(f):
            converged, message = True, "relative objective change below tolerance"
            break
    return OptimizeResult(x, float(f), g, float(gnorm), it, converged, message)
