"""Maximum likelihood for the reporting process and the payment (mark) processes.

For reporting times Z_1 <= ... <= Z_M observed on [0, a]::

    l(rho) = sum_i log psi(Z_i; rho) - Psi(a; rho)

and for the payment processes of the reported claims::

    l(theta) = sum_i { sum_k log lambda(U_ik, Z_i; theta) - Lambda(a, Z_i; theta) }.

Both are maximised by BFGS in working coordinates where strictly positive
parameters (rates, periods, Weibull parameters) are log-transformed. The
reported information is the expected (integral) information evaluated at the
estimate; the observed information is computed alongside as a misfit check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import _optim
from .claims_data import Portfolio
from .errors import DomainError, InputError, MicroforecastError, NumericalError
from .intensity import (
    DEFAULT_PERIOD,
    CustomIntensity,
    CustomMarkIntensity,
    IntensityModel,
    MarkIntensityModel,
)

GTOL = 1e-8
FTOL = 1e-12
MAX_ITER = 500
MISFIT_THRESHOLD = 0.2


class ModelMisfitWarning(UserWarning):
    """Observed and expected information disagree by more than 20%."""


@dataclass
class FitResult:
    estimate: np.ndarray
    loglik: float
    information: np.ndarray
    std_errors: np.ndarray
    iterations: int
    converged: bool
    gradient_norm: float
    param_names: tuple[str, ...] = ()
    observed_information: Optional[np.ndarray] = None
    std_errors_available: bool = True
    gradient_tolerance: float = GTOL
    message: str = ""
    warnings: list[str] = field(default_factory=list)
    model: Any = field(default=None, repr=False)

    @property
    def information_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.information + self.information.T))

    def to_dict(self) -> dict:
        def clean(x):
            return [None if not math.isfinite(v) else float(v) for v in np.ravel(x)]

        return {
            "param_names": list(self.param_names),
            "estimate": clean(self.estimate),
            "std_errors": clean(self.std_errors),
            "std_errors_available": bool(self.std_errors_available),
            "loglik": float(self.loglik),
            "information": clean(self.information),
            "information_shape": list(np.shape(self.information)),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "gradient_tolerance": float(self.gradient_tolerance),
            "gradient_norm": float(self.gradient_norm) if math.isfinite(self.gradient_norm) else None,
            "message": self.message,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict, model=None) -> "FitResult":
        def arr(x):
            return np.array([np.nan if v is None else v for v in x], dtype=float)

        info = arr(d["information"]).reshape(d.get("information_shape", [len(d["estimate"])] * 2))
        gn = d.get("gradient_norm")
        return cls(
            estimate=arr(d["estimate"]),
            loglik=float(d["loglik"]),
            information=info,
            std_errors=arr(d["std_errors"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            gradient_norm=np.nan if gn is None else float(gn),
            param_names=tuple(d.get("param_names", ())),
            std_errors_available=bool(d.get("std_errors_available", True)),
            gradient_tolerance=float(d.get("gradient_tolerance", GTOL)),
            message=d.get("message", ""),
            warnings=list(d.get("warnings", [])),
            model=model,
        )


def std_errors_from_information(info):
    """sqrt(diag(info^-1)) and whether the information was invertible.

    Invertibility is judged on the correlation scale so that parameters with
    very different units (e.g. a t**2 coefficient) do not look singular.
    """
    info = np.asarray(info, dtype=float)
    info = 0.5 * (info + info.T)
    if info.size == 0:
        return np.zeros(0), True
    d = np.diag(info)
    if not np.all(np.isfinite(info)) or np.any(d <= 0):
        return np.full(info.shape[0], np.nan), False
    s = 1.0 / np.sqrt(d)
    R = info * np.outer(s, s)
    w = np.linalg.eigvalsh(R)
    if w[0] <= 1e-12 * w[-1]:
        return np.full(info.shape[0], np.nan), False
    cov = np.linalg.inv(R) * np.outer(s, s)
    return np.sqrt(np.diag(cov)), True


def misfit_ratio(observed, expected):
    """Largest |O - E| entry scaled by sqrt(E_jj E_kk)."""
    E = np.asarray(expected, dtype=float)
    O = np.asarray(observed, dtype=float)
    d = np.sqrt(np.abs(np.outer(np.diag(E), np.diag(E))))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(O - E) / d
    r = r[np.isfinite(r)]
    return float(r.max()) if r.size else 0.0


def _require_records(p: Portfolio):
    if len(p) == 0:
        raise InputError("portfolio is empty")


# ---------------------------------------------------------------------------
# reporting process

def loglik_reporting(p: Portfolio, model: IntensityModel, t: Optional[float] = None) -> float:
    t = p.horizon_a if t is None else t
    Z = p.reporting_times
    with np.errstate(divide="ignore"):
        logs = np.log(model.eval(Z)) if Z.size else np.zeros(0)
    return float(np.sum(logs)) - model.cumulative(t)


def score_reporting(p: Portfolio, model: IntensityModel, t: Optional[float] = None) -> np.ndarray:
    t = p.horizon_a if t is None else t
    Z = p.reporting_times
    _, dPsi = model.cumulative_grad(t)
    s = np.sum(model.dlog(Z), axis=0) if Z.size else np.zeros(model.n_params)
    return s - dPsi


def observed_information_reporting(p: Portfolio, model: IntensityModel, t=None) -> np.ndarray:
    t = p.horizon_a if t is None else t
    Z = p.reporting_times
    H = np.sum(model.d2log(Z), axis=0) if Z.size else 0.0
    return -H + model.cumulative_hessian(t)


def information_reporting(model: IntensityModel, t: float) -> np.ndarray:
    """Expected information I(t) = integral of grad psi grad psi^T / psi on [0, t]."""
    return model.information(t)


# ---------------------------------------------------------------------------
# payment (mark) processes

def _mark_arrays(p: Portfolio):
    Z = p.reporting_times
    return Z, Z[p.payment_owner], p.payment_times


def loglik_marks(p: Portfolio, model: MarkIntensityModel, t: Optional[float] = None) -> float:
    t = p.horizon_a if t is None else t
    Z, Zp, U = _mark_arrays(p)
    logs = model.log_eval(U, Zp) if U.size else np.zeros(0)
    return float(np.sum(logs)) - float(np.sum(model.cumulative(t, Z)))


def score_marks(p: Portfolio, model: MarkIntensityModel, t: Optional[float] = None) -> np.ndarray:
    t = p.horizon_a if t is None else t
    Z, Zp, U = _mark_arrays(p)
    s = np.sum(model.dlog(U, Zp), axis=0) if U.size else np.zeros(model.n_params)
    dL = np.sum(model.cumulative_grad(t, Z), axis=0) if Z.size else 0.0
    return s - dL


def observed_information_marks(p: Portfolio, model: MarkIntensityModel, t=None) -> np.ndarray:
    t = p.horizon_a if t is None else t
    Z, Zp, U = _mark_arrays(p)
    H = np.sum(model.d2log(U, Zp), axis=0) if U.size else 0.0
    return -H + np.sum(model.cumulative_hessian(t, Z), axis=0)


def information_marks(p: Portfolio, model: MarkIntensityModel, t=None) -> np.ndarray:
    """Plug-in J(t) = sum over claims of the per-claim integral information."""
    t = p.horizon_a if t is None else t
    return np.sum(model.information(t, p.reporting_times), axis=0)


# ---------------------------------------------------------------------------
# generic driver

class _Problem:
    """Maps free working coordinates to a full natural parameter vector."""

    def __init__(self, base, positive, free):
        self.base = np.array(base, dtype=float)
        self.free = np.array(sorted(free), dtype=int)
        self.logged = np.array([j in positive for j in self.free], dtype=bool)

    def natural(self, u):
        theta = self.base.copy()
        theta[self.free] = np.where(self.logged, np.exp(np.clip(u, -700, 700)), u)
        return theta

    def working(self, theta):
        v = np.asarray(theta, dtype=float)[self.free]
        return np.where(self.logged, np.log(np.where(self.logged, v, 1.0)), v)

    def jac(self, u):
        return np.where(self.logged, np.exp(np.clip(u, -700, 700)), 1.0)


def _maximise(make_model, loglik, score, information, base, positive, free, *,
              observed=None, max_iter=MAX_ITER, restarts=3):
    prob = _Problem(base, positive, free)
    theta0 = prob.natural(prob.working(base))

    def fun(u):
        try:
            m = make_model(prob.natural(u))
            ll = loglik(m)
            if not math.isfinite(ll):
                return np.inf, np.zeros(u.size)
            sc = score(m)[prob.free]
        except (MicroforecastError, FloatingPointError, OverflowError):
            return np.inf, np.zeros(u.size)
        if not np.all(np.isfinite(sc)):
            return np.inf, np.zeros(u.size)
        return -ll, -sc * prob.jac(u)

    def measure(u, g):
        return float(np.max(np.abs(g / prob.jac(u)))) if g.size else 0.0

    def at_boundary(u):
        th = prob.natural(u)[prob.free]
        ref = np.maximum(np.abs(theta0[prob.free]), 1.0)
        return bool(np.any(prob.logged & (th < 1e-10 * ref)))

    u = prob.working(base)
    total = 0
    res = None
    for _ in range(restarts + 1):
        try:
            info = information(make_model(prob.natural(u)))[np.ix_(prob.free, prob.free)]
            J = prob.jac(u)
            h0 = _optim.precondition(info * np.outer(J, J))
        except (MicroforecastError, np.linalg.LinAlgError, FloatingPointError):
            h0 = None
        res = _optim.bfgs(
            fun, u, hess_inv0=h0, gtol=GTOL, ftol=FTOL, max_iter=max_iter - total,
            grad_measure=measure, at_boundary=at_boundary,
        )
        total += res.iterations
        u = res.x
        if res.converged or total >= max_iter or "boundary" in res.message:
            break
    res.iterations = total
    theta = prob.natural(res.x)
    if observed is not None and res.gradient_norm > GTOL and "boundary" not in res.message:
        theta, res = _newton_polish(make_model, loglik, score, observed, theta, prob, res)
    return theta, res


def _newton_polish(make_model, loglik, score, observed, theta, prob, res, steps=20):
    """Damped Newton steps on the free parameters using the observed information.

    Quasi-Newton updates stall once the objective change is at rounding
    level while the score can still be far from zero when the parameters are
    badly scaled; a few exact Newton steps remove the remaining error.
    """
    free = prob.free
    m = make_model(theta)
    ll = loglik(m)
    sc = score(m)[free]
    gnorm = float(np.max(np.abs(sc))) if sc.size else 0.0
    for _ in range(steps):
        if gnorm <= GTOL:
            break
        try:
            O = observed(m)[np.ix_(free, free)]
            delta = np.linalg.solve(O, sc)
        except (MicroforecastError, np.linalg.LinAlgError):
            break
        if not np.all(np.isfinite(delta)):
            break
        improved = False
        step = 1.0
        for _ in range(30):
            cand = theta.copy()
            cand[free] = theta[free] + step * delta
            try:
                m2 = make_model(cand)
                ll2 = loglik(m2)
                sc2 = score(m2)[free]
            except MicroforecastError:
                step *= 0.5
                continue
            g2 = float(np.max(np.abs(sc2)))
            if math.isfinite(ll2) and ll2 >= ll - 1e-10 * max(1.0, abs(ll)) and g2 < gnorm:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        theta, m, ll, sc, gnorm = cand, m2, ll2, sc2, g2
        res.iterations += 1
    res.gradient_norm = gnorm
    res.x = prob.working(theta)
    if gnorm <= GTOL:
        res.converged, res.message = True, "gradient tolerance reached"
    return theta, res


def _finish(model, loglik_value, res, info, observed, names):
    se, ok = std_errors_from_information(info)
    msgs = []
    if observed is not None and info.size and res.converged:
        r = misfit_ratio(observed, info)
        if r > MISFIT_THRESHOLD:
            msg = (
                f"observed and expected information differ by {100 * r:.0f}% "
                "(possible model misfit)"
            )
            warnings.warn(msg, ModelMisfitWarning, stacklevel=3)
            msgs.append(msg)
    if not ok:
        msgs.append("information matrix singular; standard errors unavailable")
    # the relative-change stop accepts a score at rounding level of the loglik
    tol = GTOL
    if res.converged and res.gradient_norm > GTOL:
        tol = _optim.rounding_gradient_tolerance(loglik_value)
    return FitResult(
        estimate=np.array(model.params),
        loglik=float(loglik_value),
        information=info,
        std_errors=se,
        iterations=res.iterations,
        converged=res.converged,
        gradient_norm=res.gradient_norm,
        param_names=tuple(model.spec.param_names),
        observed_information=observed,
        std_errors_available=ok,
        gradient_tolerance=tol,
        message=res.message,
        warnings=msgs,
        model=model,
    )


def _safe(f, *args):
    try:
        return f(*args)
    except (MicroforecastError, np.linalg.LinAlgError):
        return None


# ---------------------------------------------------------------------------
# reporting fit

def _binned_log_rate(Z, a, n_bins=None):
    n_bins = n_bins or int(min(50, max(2, math.sqrt(Z.size))))
    edges = np.linspace(0.0, a, n_bins + 1)
    counts, _ = np.histogram(Z, edges)
    mids = 0.5 * (edges[1:] + edges[:-1])
    keep = counts > 0
    if keep.sum() < 2:
        return None
    A = np.stack([np.ones(keep.sum()), mids[keep]], axis=1)
    y = np.log(counts[keep] / np.diff(edges)[keep])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def _default_reporting_init(p: Portfolio, family: str):
    Z, a, M = p.reporting_times, p.horizon_a, len(p)
    rate = M / a
    if family == "constant":
        return np.array([rate]), None
    if family == "exponential":
        coef = _binned_log_rate(Z, a)
        return (np.array([math.log(rate), 0.0]) if coef is None else coef), None
    if family == "log_periodic":
        floor = max(np.min(Z), 1e-9)
        gap = math.log(a) - float(np.mean(np.log(np.maximum(Z, floor))))
        k = 1.0 / gap if gap > 0 else 1.0
        level = math.log(M * k) - k * math.log(a)
        return np.array([level, k - 1.0, 0.0, 0.0, DEFAULT_PERIOD]), (0, 1)
    if family == "quad_periodic":
        coef = _binned_log_rate(Z, a)
        coef = np.array([math.log(rate), 0.0]) if coef is None else coef
        return np.array([coef[0], coef[1], 0.0, 0.0, 0.0, DEFAULT_PERIOD]), (0, 1, 2)
    raise InputError(f"no default initial value for family {family!r}; pass init")


def _reporting_model(family, custom):
    def make(theta):
        return IntensityModel(family, tuple(theta), custom)
    return make


def fit_reporting(
    p: Portfolio,
    family,
    init: Optional[Sequence[float]] = None,
    *,
    period_grid: Optional[Sequence[float]] = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """ML estimate of the reporting intensity on [0, horizon_a].

    ``family`` is a built-in family name or a :class:`CustomIntensity`.
    Periodic families start from the non-seasonal sub-model; with
    ``period_grid`` the period is first profiled over the grid values.
    """
    _require_records(p)
    custom = family if isinstance(family, CustomIntensity) else None
    name = custom.name if custom else str(family)
    make = _reporting_model(name, custom)
    t = p.horizon_a
    submodel = None
    if init is None:
        theta, submodel = _default_reporting_init(p, name)
    else:
        theta = np.array(init, dtype=float)
    spec = make(theta).spec
    positive = set(spec.positive)
    q = spec.n_params
    if name == "constant" and not theta[0] > 0:
        raise InputError("constant family requires a positive initial rate")

    ll = lambda m: loglik_reporting(p, m, t)
    sc = lambda m: score_reporting(p, m, t)
    info = lambda m: information_reporting(m, t)
    obs = lambda m: observed_information_reporting(p, m, t)

    if submodel is not None:
        theta, _ = _maximise(make, ll, sc, info, theta, positive, submodel, observed=obs, max_iter=max_iter)
    period_idx = q - 1 if name in ("log_periodic", "quad_periodic") else None
    if period_grid is not None and period_idx is not None:
        best = None
        for P in period_grid:
            start = theta.copy()
            start[period_idx] = float(P)
            free = [j for j in range(q) if j != period_idx]
            th, _ = _maximise(make, ll, sc, info, start, positive, free, observed=obs, max_iter=max_iter)
            value = _safe(ll, make(th))
            if value is not None and (best is None or value > best[0]):
                best = (value, th)
        if best is not None:
            theta = best[1]
    theta, res = _maximise(make, ll, sc, info, theta, positive, range(q), observed=obs, max_iter=max_iter)
    model = make(theta)
    observed = _safe(obs, model)
    return _finish(model, ll(model), res, info(model), observed, spec.param_names)


# ---------------------------------------------------------------------------
# mark fit

def _default_mark_init(p: Portfolio, family: str):
    exposure = float(np.sum(p.horizon_a - p.reporting_times))
    if exposure <= 0:
        raise InputError("no payment exposure: every claim is reported at the horizon")
    n = float(np.sum(p.payment_counts))
    rate = max(n, 0.5) / exposure
    if family == "constant_mark":
        return np.array([rate]), None
    if family == "weibull_baseline":
        return np.array([1.0, rate, 0.0]), None
    if family == "exp_trend_periodic":
        return np.array([math.log(rate), 0.0, 0.0, 0.0, DEFAULT_PERIOD]), (0, 1)
    raise InputError(f"no default initial value for family {family!r}; pass init")


def fit_marks(
    p: Portfolio,
    family,
    init: Optional[Sequence[float]] = None,
    *,
    period_grid: Optional[Sequence[float]] = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """ML estimate of the shared payment intensity parameters."""
    _require_records(p)
    custom = family if isinstance(family, CustomMarkIntensity) else None
    name = custom.name if custom else str(family)

    def make(theta):
        return MarkIntensityModel(name, tuple(theta), custom)

    t = p.horizon_a
    submodel = None
    if init is None:
        theta, submodel = _default_mark_init(p, name)
    else:
        theta = np.array(init, dtype=float)
    spec = make(theta).spec
    positive = set(spec.positive)
    q = spec.n_params

    ll = lambda m: loglik_marks(p, m, t)
    sc = lambda m: score_marks(p, m, t)
    info = lambda m: information_marks(p, m, t)
    obs = lambda m: observed_information_marks(p, m, t)

    if submodel is not None:
        theta, _ = _maximise(make, ll, sc, info, theta, positive, submodel, observed=obs, max_iter=max_iter)
    if period_grid is not None and name == "exp_trend_periodic":
        best = None
        for P in period_grid:
            start = theta.copy()
            start[4] = float(P)
            th, _ = _maximise(make, ll, sc, info, start, positive, range(4), observed=obs, max_iter=max_iter)
            value = _safe(ll, make(th))
            if value is not None and (best is None or value > best[0]):
                best = (value, th)
        if best is not None:
            theta = best[1]
    theta, res = _maximise(make, ll, sc, info, theta, positive, range(q), observed=obs, max_iter=max_iter)
    model = make(theta)
    observed = _safe(obs, model)
    return _finish(model, ll(model), res, info(model), observed, spec.param_names)
