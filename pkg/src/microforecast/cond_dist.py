"""Conditional distributions of a positive quantity given the reporting time z.

Used for reporting delays W | Z = z and payment amounts X | Z = z. Each
family has two parameter functions c(z), d(z) of the form

    c(z) = alpha + (z / 7) beta
           + sum_l { delta_l cos(xi_l 2 pi z / 364) + gamma_l sin(xi_l 2 pi z / 364) }

with coefficient vector laid out as [alpha, beta, delta_1, xi_1, gamma_1, ...].

* lognormal: log X ~ N(c, d^2)
* weibull:   shape c, scale d, f(x) = (c / d^c) x^(c-1) exp(-(x/d)^c)
* gamma:     shape c, scale d, f(x) = x^(c-1) exp(-x/d) / (Gamma(c) d^c)
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import _numerics as num
from . import _optim
from .errors import InitializationError, InputError, ParameterError
from .poisson_fit import FitResult, GTOL, std_errors_from_information

FAMILIES = ("lognormal", "weibull", "gamma")
WEEK_DAYS = 7.0
YEAR_WEEKS = 52.0
_OMEGA = 2.0 * math.pi / (WEEK_DAYS * YEAR_WEEKS)
_LN_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
PIT_CLAMP = 1e-12
QUANTILE_TOL = 1e-12


def n_coefficients(L: int) -> int:
    return 2 + 3 * L


def default_coefficients(L: int, level: float = 0.0) -> tuple[float, ...]:
    """Constant level with zero trend and zero harmonics (xi_l = l)."""
    v = [level, 0.0]
    for ell in range(1, L + 1):
        v += [0.0, float(ell), 0.0]
    return tuple(v)


def _fourier(v, z):
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    out = v[0] + v[1] * z / WEEK_DAYS
    for ell in range((v.size - 2) // 3):
        delta, xi, gamma = v[2 + 3 * ell: 5 + 3 * ell]
        ang = xi * _OMEGA * z
        out = out + delta * np.cos(ang) + gamma * np.sin(ang)
    return out


def _fourier_grad(v, z):
    """d c(z) / d v, shape z.shape + (len(v),)."""
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    cols = [np.ones_like(z), z / WEEK_DAYS]
    for ell in range((v.size - 2) // 3):
        delta, xi, gamma = v[2 + 3 * ell: 5 + 3 * ell]
        ang = xi * _OMEGA * z
        co, si = np.cos(ang), np.sin(ang)
        cols += [co, _OMEGA * z * (gamma * co - delta * si), si]
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class CondDistModel:
    family: str
    L: int
    trend: bool
    theta1: tuple[float, ...]
    theta2: tuple[float, ...]
    xi_fixed: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown conditional family {self.family!r}")
        if not (isinstance(self.L, (int, np.integer)) and self.L >= 0):
            raise InputError(f"Fourier order must be a nonnegative integer, got {self.L!r}")
        object.__setattr__(self, "L", int(self.L))
        for name in ("theta1", "theta2"):
            v = tuple(float(x) for x in np.ravel(getattr(self, name)))
            if len(v) != n_coefficients(self.L):
                raise InputError(
                    f"{name} needs {n_coefficients(self.L)} coefficients for L={self.L}, got {len(v)}"
                )
            if not all(math.isfinite(x) for x in v):
                raise InputError(f"{name} has non-finite entries")
            if not self.trend and v[1] != 0.0:
                raise InputError(f"{name}: trend coefficient must be 0 when the trend is disabled")
            object.__setattr__(self, name, v)

    @property
    def n_params(self) -> int:
        return 2 * n_coefficients(self.L)

    @property
    def params(self) -> np.ndarray:
        return np.array(self.theta1 + self.theta2)

    def with_params(self, params) -> "CondDistModel":
        k = n_coefficients(self.L)
        p = np.asarray(params, dtype=float)
        return CondDistModel(self.family, self.L, self.trend, p[:k], p[k:], self.xi_fixed)

    def param_names(self) -> tuple[str, ...]:
        base = ["alpha", "beta"]
        for ell in range(1, self.L + 1):
            base += [f"delta{ell}", f"xi{ell}", f"gamma{ell}"]
        return tuple(f"c.{b}" for b in base) + tuple(f"d.{b}" for b in base)

    def free_mask(self, free_xi: Optional[bool] = None) -> np.ndarray:
        """Which coefficients a fit estimates (trend and frequencies may be fixed)."""
        free_xi = (not self.xi_fixed) if free_xi is None else free_xi
        k = n_coefficients(self.L)
        m = np.ones(k, dtype=bool)
        m[1] = self.trend
        for ell in range(self.L):
            m[3 + 3 * ell] = free_xi
        return np.concatenate([m, m])

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "L": self.L,
            "trend": self.trend,
            "theta1": list(self.theta1),
            "theta2": list(self.theta2),
            "xi_fixed": self.xi_fixed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CondDistModel":
        allowed = {"family", "L", "trend", "theta1", "theta2", "xi_fixed"}
        extra = set(d) - allowed
        if extra:
            raise InputError(f"unknown keys in conditional model: {sorted(extra)}")
        return cls(d["family"], d["L"], bool(d["trend"]), tuple(d["theta1"]),
                   tuple(d["theta2"]), bool(d.get("xi_fixed", True)))

    @classmethod
    def from_json(cls, text: str) -> "CondDistModel":
        return cls.from_dict(json.loads(text))


def constant_model(family: str, c: float, d: float) -> CondDistModel:
    return CondDistModel(family, 0, False, (c, 0.0), (d, 0.0))


def param_c(m: CondDistModel, z):
    out = _fourier(m.theta1, z)
    return float(out) if np.ndim(out) == 0 else out


def param_d(m: CondDistModel, z):
    out = _fourier(m.theta2, z)
    return float(out) if np.ndim(out) == 0 else out


def _params_at(m: CondDistModel, z):
    c = np.asarray(_fourier(m.theta1, z), dtype=float)
    d = np.asarray(_fourier(m.theta2, z), dtype=float)
    bad = ~(d > 0)
    if m.family != "lognormal":
        bad |= ~(c > 0)
    if np.any(bad):
        zb = np.broadcast_to(np.asarray(z, dtype=float), bad.shape)
        z0 = float(zb[bad].ravel()[0]) if zb.ndim else float(zb)
        raise ParameterError(
            f"{m.family}: parameter functions must be positive (c={np.ravel(c[bad] if c.ndim else c)[0]:.6g}, "
            f"d={np.ravel(d[bad] if d.ndim else d)[0]:.6g})",
            z0,
        )
    return c, d


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


# per-family kernels in terms of (c, d) ---------------------------------------

def _logpdf_cd(family, x, c, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        if family == "lognormal":
            pos = x > 0
            y = np.log(np.where(pos, x, 1.0))
            val = -y - np.log(d) - _LN_SQRT_2PI - 0.5 * ((y - c) / d) ** 2
            return np.where(pos, val, -np.inf)
        if family == "weibull":
            r = x / d
            val = np.log(c) - np.log(d) + special.xlogy(c - 1.0, r) - r ** c
            return np.where(x >= 0, val, -np.inf)
        val = special.xlogy(c - 1.0, x) - x / d - special.gammaln(c) - c * np.log(d)
        return np.where(x >= 0, val, -np.inf)


def _dlogpdf_cd(family, x, c, d):
    """(d log f / d c, d log f / d d) at x > 0."""
    if family == "lognormal":
        e = np.log(x) - c
        return e / d ** 2, -1.0 / d + e ** 2 / d ** 3
    if family == "weibull":
        r = x / d
        rc = r ** c
        lr = np.log(r)
        return 1.0 / c + lr * (1.0 - rc), (c / d) * (rc - 1.0)
    return np.log(x) - special.digamma(c) - np.log(d), -c / d + x / d ** 2


def _cdf_cd(family, x, c, d):
    x = np.maximum(x, 0.0)
    with np.errstate(divide="ignore"):
        if family == "lognormal":
            return np.where(x > 0, special.ndtr((np.log(np.where(x > 0, x, 1.0)) - c) / d), 0.0)
        if family == "weibull":
            return -np.expm1(-((x / d) ** c))
        return special.gammainc(c, x / d)


def _gamma_quantile(u, c, d):
    """Safeguarded Newton on P(c, y) = u with a bisection fallback, y = x / d."""
    u, c, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (u, c, d)))
    out = np.empty(u.shape)
    for idx in np.ndindex(u.shape):
        out[idx] = d[idx] * _gamma_quantile_unit(float(u[idx]), float(c[idx]))
    return out


def _gamma_quantile_unit(u, c):
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return math.inf
    # Wilson-Hilferty start
    zq = float(special.ndtri(u))
    w = 1.0 - 1.0 / (9.0 * c) + zq / (3.0 * math.sqrt(c))
    y = c * w ** 3 if w > 0 else (u * math.gamma(c + 1.0)) ** (1.0 / c)
    lo, hi = 0.0, max(1.0, 2.0 * y)
    while special.gammainc(c, hi) < u:
        lo, hi = hi, 2.0 * hi
    if not lo < y < hi:
        y = 0.5 * (lo + hi)
    lg = math.lgamma(c)
    for _ in range(200):
        f = special.gammainc(c, y) - u
        if f > 0:
            hi = y
        else:
            lo = y
        dens = math.exp((c - 1.0) * math.log(y) - y - lg) if y > 0 else 0.0
        step_ok = False
        if dens > 0:
            y_new = y - f / dens
            step_ok = lo < y_new < hi
        if not step_ok:
            y_new = 0.5 * (lo + hi)
        if abs(y_new - y) <= QUANTILE_TOL * max(1.0, y_new) or hi - lo <= QUANTILE_TOL * max(1.0, lo):
            return y_new
        y = y_new
    return y


def _quantile_cd(family, u, c, d):
    if family == "lognormal":
        return np.exp(c + d * special.ndtri(u))
    if family == "weibull":
        return d * (-np.log1p(-u)) ** (1.0 / c)
    return _gamma_quantile(u, c, d)


def _mean_cd(family, c, d):
    if family == "lognormal":
        return np.exp(c + 0.5 * d * d)
    if family == "weibull":
        return d * special.gamma(1.0 + 1.0 / c)
    return c * d


# public evaluation ------------------------------------------------------------

def logpdf(m: CondDistModel, x, z):
    c, d = _params_at(m, z)
    return _scalar(_logpdf_cd(m.family, np.asarray(x, dtype=float), c, d))


def density(m: CondDistModel, x, z):
    """f(x; c(z), d(z)); zero outside the support."""
    c, d = _params_at(m, z)
    return _scalar(np.exp(_logpdf_cd(m.family, np.asarray(x, dtype=float), c, d)))


def cdf(m: CondDistModel, x, z):
    c, d = _params_at(m, z)
    return _scalar(_cdf_cd(m.family, np.asarray(x, dtype=float), c, d))


def quantile(m: CondDistModel, u, z):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise InputError("quantile level must lie in (0, 1)")
    c, d = _params_at(m, z)
    return _scalar(_quantile_cd(m.family, u, c, d))


def mean(m: CondDistModel, z):
    c, d = _params_at(m, z)
    return _scalar(_mean_cd(m.family, c, d))


def sample(m: CondDistModel, z, rng: np.random.Generator):
    """One draw per entry of ``z``."""
    c, d = _params_at(m, z)
    c, d = np.broadcast_arrays(c, d)
    if m.family == "lognormal":
        out = np.exp(c + d * rng.standard_normal(c.shape))
    elif m.family == "weibull":
        out = d * rng.weibull(c)
    else:
        out = d * rng.standard_gamma(c)
    return _scalar(out)


# likelihood -------------------------------------------------------------------

def _split(observations):
    obs = np.asarray(observations, dtype=float)
    if obs.size == 0:
        return np.zeros(0), np.zeros(0)
    if obs.ndim != 2 or obs.shape[1] != 2:
        raise InputError("observations must be (z, value) pairs")
    return obs[:, 0], obs[:, 1]


def loglik(m: CondDistModel, observations) -> float:
    z, x = _split(observations)
    c, d = _params_at(m, z)
    return float(np.sum(_logpdf_cd(m.family, x, c, d)))


def score(m: CondDistModel, observations) -> np.ndarray:
    """Gradient of the log-likelihood with respect to [theta1, theta2]."""
    z, x = _split(observations)
    c, d = _params_at(m, z)
    gc, gd = _dlogpdf_cd(m.family, x, c, d)
    Bc = _fourier_grad(m.theta1, z)
    Bd = _fourier_grad(m.theta2, z)
    return np.concatenate([gc @ Bc, gd @ Bd])


def pit_transform(m: CondDistModel, observations) -> np.ndarray:
    """Phi^-1(F(value | z)) per observation; standard normal under the model."""
    z, x = _split(observations)
    u = np.asarray(cdf(m, x, z), dtype=float)
    clipped = (u < PIT_CLAMP) | (u > 1.0 - PIT_CLAMP)
    n = int(np.sum(clipped))
    if n:
        warnings.warn(f"{n} CDF values clamped to [{PIT_CLAMP}, 1 - {PIT_CLAMP}]", RuntimeWarning,
                      stacklevel=2)
    return special.ndtri(np.clip(u, PIT_CLAMP, 1.0 - PIT_CLAMP))


# fitting ----------------------------------------------------------------------

def min_observations(L: int) -> int:
    return max(10, 3 * n_coefficients(L))


def _moment_cd(family, x):
    """(c, d) from log-moments (lognormal, weibull) or moments (gamma)."""
    y = np.log(x)
    if family == "lognormal":
        return float(np.mean(y)), max(float(np.std(y)), 1e-3)
    if family == "weibull":
        s = max(float(np.std(y)), 1e-3)
        c = math.pi / (s * math.sqrt(6.0))
        return c, float(np.exp(np.mean(y) + np.euler_gamma / c))
    mu, var = float(np.mean(x)), float(np.var(x))
    var = max(var, 1e-6 * mu * mu)
    return mu * mu / var, var / mu


def _design(L, trend, z, xi=None):
    cols = [np.ones_like(z)]
    if trend:
        cols.append(z / WEEK_DAYS)
    for ell in range(1, L + 1):
        w = (xi[ell - 1] if xi is not None else ell) * _OMEGA * z
        cols += [np.cos(w), np.sin(w)]
    return np.stack(cols, axis=-1)


def _expand(coef, L, trend, xi=None):
    v = [coef[0], coef[1] if trend else 0.0]
    k = 2 if trend else 1
    for ell in range(1, L + 1):
        v += [coef[k], float(xi[ell - 1]) if xi is not None else float(ell), coef[k + 1]]
        k += 2
    return tuple(v)


def weekly_initial_values(family, L, trend, z, x, constraint_z=None, xi=None):
    """Least-squares fit of the Fourier basis to weekly-binned (c, d) estimates.

    Falls back to the pooled constant estimate when there are too few usable
    weeks or when the least-squares fit is not admissible on the constraint
    set, so the result is always feasible.
    """
    pooled = _moment_cd(family, x)
    const = CondDistModel(family, L, trend, _expand([pooled[0]] + [0.0] * (1 + 2 * L), L, trend, xi),
                          _expand([pooled[1]] + [0.0] * (1 + 2 * L), L, trend, xi))
    week = np.floor(z / WEEK_DAYS)
    centres, cs, ds, ws = [], [], [], []
    for w in np.unique(week):
        sel = week == w
        if sel.sum() < 2 or np.ptp(x[sel]) == 0:
            continue
        c, d = _moment_cd(family, x[sel])
        centres.append(float(np.mean(z[sel])))
        cs.append(c)
        ds.append(d)
        ws.append(float(sel.sum()))
    n_coef = 1 + int(trend) + 2 * L
    if len(centres) < 2 * n_coef:
        return const
    A = _design(L, trend, np.array(centres), xi)
    sw = np.sqrt(np.array(ws))[:, None]
    cc, *_ = np.linalg.lstsq(A * sw, np.array(cs) * sw[:, 0], rcond=None)
    cd, *_ = np.linalg.lstsq(A * sw, np.array(ds) * sw[:, 0], rcond=None)
    cand = CondDistModel(family, L, trend, _expand(cc, L, trend, xi), _expand(cd, L, trend, xi))
    zc = z if constraint_z is None else np.concatenate([z, constraint_z])
    try:
        _params_at(cand, zc)
    except ParameterError:
        return const
    if not math.isfinite(loglik(cand, np.column_stack([z, x]))):
        return const
    return cand


def _constraint_points(z, window):
    if window is None:
        return np.unique(z)
    lo, hi = float(window[0]), float(window[1])
    return np.unique(np.concatenate([z, np.linspace(lo, hi, 65)]))


def fit(
    observations,
    family: str,
    L: int = 0,
    trend: bool = False,
    init: Optional[CondDistModel] = None,
    *,
    free_xi: bool = False,
    constraint_window: Optional[Sequence[float]] = None,
    min_obs: Optional[int] = None,
    max_iter: int = 500,
) -> FitResult:
    """Constrained ML fit of a conditional distribution.

    ``observations`` are (z, value) pairs with value > 0. The positivity
    constraints are imposed at every observed z and, when given, on a grid
    over ``constraint_window`` (the prediction window). ``free_xi`` estimates
    the harmonic frequencies using five starts. ``FitResult.model`` holds the
    fitted :class:`CondDistModel`; estimates, standard errors and the observed
    information refer to the free coefficients listed in ``param_names``.
    """
    if family not in FAMILIES:
        raise InputError(f"unknown conditional family {family!r}")
    z, x = _split(observations)
    need = min_observations(L) if min_obs is None else min_obs
    if z.size < need:
        raise InputError(f"need at least {need} observations for L={L}, got {z.size}")
    if np.any(~np.isfinite(z)) or np.any(~(x > 0)):
        raise InputError("values must be positive and reporting times finite")
    obs = np.column_stack([z, x])
    zc = _constraint_points(z, constraint_window)

    if init is not None:
        if (init.family, init.L, init.trend) != (family, L, trend):
            raise InputError("initial model does not match family, L and trend")
        try:
            _params_at(init, zc)
        except ParameterError as exc:
            raise InitializationError(f"initial values infeasible: {exc}") from None
        starts = [init]
    else:
        starts = [weekly_initial_values(family, L, trend, z, x, zc)]
    if free_xi and L > 0:
        base = starts[0]
        offsets = [0.0, 0.25, -0.25]
        patterns = [np.full(L, o) for o in offsets]
        alt = np.array([0.25 if ell % 2 == 0 else -0.25 for ell in range(L)])
        patterns += [alt, -alt]
        starts = []
        for pat in patterns:
            xi = np.arange(1, L + 1) + pat
            if init is None:
                s = weekly_initial_values(family, L, trend, z, x, zc, xi)
            else:
                p = base.params.copy()
                k = n_coefficients(L)
                for ell in range(L):
                    p[3 + 3 * ell] += pat[ell]
                    p[k + 3 * ell + 3] += pat[ell]
                s = base.with_params(p)
            starts.append(s)

    best = None
    for start in starts:
        start = CondDistModel(family, L, trend, start.theta1, start.theta2, xi_fixed=not free_xi)
        out = _fit_from(start, obs, zc, free_xi, max_iter)
        if best is None or (out.loglik > best.loglik and math.isfinite(out.loglik)):
            best = out
    return best


def _fit_from(start: CondDistModel, obs, zc, free_xi, max_iter):
    mask = start.free_mask(free_xi)
    idx = np.flatnonzero(mask)
    base = start.params
    names = tuple(np.array(start.param_names())[idx])
    family = start.family
    k = n_coefficients(start.L)

    def model_of(u):
        p = base.copy()
        p[idx] = u
        return start.with_params(p)

    def feasible(m):
        c = _fourier(m.theta1, zc)
        d = _fourier(m.theta2, zc)
        ok = np.all(d > 0)
        if family != "lognormal":
            ok = ok and np.all(c > 0)
        return bool(ok)

    def fun(u):
        try:
            m = model_of(u)
        except InputError:
            return np.inf, np.zeros(u.size)
        if not feasible(m):
            return np.inf, np.zeros(u.size)
        ll = loglik(m, obs)
        if not math.isfinite(ll):
            return np.inf, np.zeros(u.size)
        g = score(m, obs)[idx]
        if not np.all(np.isfinite(g)):
            return np.inf, np.zeros(u.size)
        return -ll, -g

    def grad_only(u):
        return fun(u)[1]

    d0 = float(np.min(_fourier(start.theta2, zc)))
    c0 = float(np.min(_fourier(start.theta1, zc)))

    def at_boundary(u):
        m = model_of(u)
        if np.min(_fourier(m.theta2, zc)) < 1e-8 * max(1.0, d0):
            return True
        return family != "lognormal" and np.min(_fourier(m.theta1, zc)) < 1e-8 * max(1.0, c0)

    u0 = base[idx]
    if not math.isfinite(fun(u0)[0]):
        raise InitializationError("log-likelihood not finite at the initial values")
    total = 0
    res = None
    u = u0
    for _ in range(4):
        try:
            H = num.fd_hess_from_grad(grad_only, u)
            h0 = _optim.precondition(H)
        except (ValueError, np.linalg.LinAlgError):
            h0 = None
        res = _optim.bfgs(fun, u, hess_inv0=h0, gtol=GTOL, max_iter=max_iter - total,
                          at_boundary=at_boundary)
        total += res.iterations
        u = res.x
        if res.converged or total >= max_iter or "boundary" in res.message:
            break
    res.iterations = total
    if not res.converged and "boundary" not in res.message:
        res = _newton_polish(fun, grad_only, res)
    elif res.converged and res.gradient_norm > GTOL:
        res = _newton_polish(fun, grad_only, res)

    m = model_of(res.x)
    ll = loglik(m, obs)
    try:
        info = num.fd_hess_from_grad(grad_only, res.x)
    except (ValueError, np.linalg.LinAlgError):
        info = np.full((idx.size, idx.size), np.nan)
    if not np.all(np.isfinite(info)):
        se, ok = np.full(idx.size, np.nan), False
    else:
        se, ok = std_errors_from_information(info)
    msgs = [] if ok else ["observed information singular; standard errors unavailable"]
    tol = GTOL
    if res.converged and res.gradient_norm > GTOL:
        tol = _optim.rounding_gradient_tolerance(ll)
    return FitResult(
        estimate=np.array(res.x, dtype=float),
        loglik=ll,
        information=info,
        std_errors=se,
        iterations=res.iterations,
        converged=res.converged,
        gradient_norm=res.gradient_norm,
        param_names=names,
        observed_information=info,
        std_errors_available=ok,
        gradient_tolerance=tol,
        message=res.message,
        warnings=msgs,
        model=m,
    )


def _newton_polish(fun, grad_only, res, steps=20):
    """Newton steps with finite-difference Hessians of the analytic gradient."""
    x, f, g = res.x, res.fun, res.grad
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    for _ in range(steps):
        if gnorm <= GTOL:
            break
        try:
            H = num.fd_hess_from_grad(grad_only, x)
            delta = -np.linalg.solve(H, g)
        except (ValueError, np.linalg.LinAlgError):
            break
        if not np.all(np.isfinite(delta)):
            break
        step, moved = 1.0, False
        for _ in range(30):
            f2, g2 = fun(x + step * delta)
            n2 = float(np.max(np.abs(g2))) if g2.size else 0.0
            if math.isfinite(f2) and f2 <= f + 1e-10 * max(1.0, abs(f)) and n2 < gnorm:
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        x, f, g, gnorm = x + step * delta, f2, g2, n2
        res.iterations += 1
    res.x, res.fun, res.grad, res.gradient_norm = x, f, g, gnorm
    if gnorm <= GTOL:
        res.converged, res.message = True, "gradient tolerance reached"
    return res
