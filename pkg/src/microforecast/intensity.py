"""Parametric intensity families.

Two kinds of intensity are modelled:

* reporting intensities ``psi(t; rho)`` of the claim-reporting process, and
* mark intensities ``lambda(tau, z; theta)`` of the payment process of a
  claim reported at ``z``; they vanish for ``tau < z``.

Every built-in family supplies analytic first and second parameter
derivatives. Cumulative intensities are closed form where one exists and
otherwise computed by adaptive quadrature. User-defined families plug in via
:class:`CustomIntensity` / :class:`CustomMarkIntensity`; missing derivatives
fall back to central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _numerics as num
from .errors import DomainError, InputError, NumericalError, ParameterError

LOG_FLOOR = 1e-9  # log_periodic is undefined at t = 0
DEFAULT_PERIOD = 364.0  # 52 weeks of 7 days
BOUND_SAFETY = 1.001
BOUND_GRID = 1024


def _seasonal(t, a, b, period):
    """a cos(2 pi t / P) + b sin(2 pi t / P) with derivatives in (a, b, P)."""
    phi = 2.0 * np.pi * t / period
    c, s = np.cos(phi), np.sin(phi)
    r = phi / period
    val = a * c + b * s
    g = np.stack([c, s, r * (a * s - b * c)], axis=-1)
    H = np.zeros(t.shape + (3, 3))
    H[..., 0, 2] = H[..., 2, 0] = r * s
    H[..., 1, 2] = H[..., 2, 1] = -r * c
    H[..., 2, 2] = -2.0 * r / period * (a * s - b * c) - r * r * (a * c + b * s)
    return val, g, H


def _outer(g):
    return g[..., :, None] * g[..., None, :]


# ---------------------------------------------------------------------------
# reporting families

class _ReportingFamily:
    name = ""
    param_names: tuple[str, ...] = ()
    positive: tuple[int, ...] = ()
    monotone = False
    t_floor = 0.0
    closed_cumulative = False

    @property
    def n_params(self):
        return len(self.param_names)

    def validate(self, p):
        for j in self.positive:
            if not p[j] > 0:
                raise ParameterError(f"{self.name}: parameter {self.param_names[j]} must be > 0")

    # log-linear default: psi = exp(eta)
    def log_terms(self, t, p):
        raise NotImplementedError

    def eta(self, t, p):
        """log psi without derivatives (hot path for thinning)."""
        return self.log_terms(t, p)[0]

    def value(self, t, p):
        return np.exp(self.eta(t, p))

    def grad(self, t, p):
        eta, g, _ = self.log_terms(t, p)
        return np.exp(eta)[..., None] * g

    def hess(self, t, p):
        eta, g, H = self.log_terms(t, p)
        return np.exp(eta)[..., None, None] * (H + _outer(g))

    def dlog(self, t, p):
        return self.log_terms(t, p)[1]

    def d2log(self, t, p):
        return self.log_terms(t, p)[2]

    def cumulative_terms(self, t, p):
        raise NotImplementedError

    def scalar_value(self, t, p):
        """psi at a single float t (quadrature integrand fast path)."""
        return float(self.value(np.asarray(t, dtype=float), p))


class _Constant(_ReportingFamily):
    name = "constant"
    param_names = ("rate",)
    positive = (0,)
    monotone = True
    closed_cumulative = True

    def validate(self, p):
        # rate 0 is allowed for simulation (empty process); fitting uses rate > 0
        if not p[0] >= 0:
            raise ParameterError("constant: rate must be >= 0")

    def value(self, t, p):
        return np.full(t.shape, p[0])

    def grad(self, t, p):
        return np.ones(t.shape + (1,))

    def hess(self, t, p):
        return np.zeros(t.shape + (1, 1))

    def dlog(self, t, p):
        return np.full(t.shape + (1,), 1.0 / p[0])

    def d2log(self, t, p):
        return np.full(t.shape + (1, 1), -1.0 / p[0] ** 2)

    def cumulative_terms(self, t, p):
        return p[0] * t, t[..., None], np.zeros(t.shape + (1, 1))


class _Exponential(_ReportingFamily):
    name = "exponential"
    param_names = ("log_level", "trend")
    monotone = True
    closed_cumulative = True

    def log_terms(self, t, p):
        g = np.stack([np.ones_like(t), t], axis=-1)
        return p[0] + p[1] * t, g, np.zeros(t.shape + (2, 2))

    def eta(self, t, p):
        return p[0] + p[1] * t

    def cumulative_terms(self, t, p):
        m = num.exp_moments(p[1], t, 2)
        e = math.exp(p[0])
        d = np.stack([m[0], m[1]], axis=-1) * e
        H = np.empty(t.shape + (2, 2))
        H[..., 0, 0] = m[0]
        H[..., 0, 1] = H[..., 1, 0] = m[1]
        H[..., 1, 1] = m[2]
        return e * m[0], d, e * H


class _LogPeriodic(_ReportingFamily):
    name = "log_periodic"
    param_names = ("log_level", "log_power", "cos", "sin", "period")
    positive = (4,)
    t_floor = LOG_FLOOR

    def log_terms(self, t, p):
        sv, sg, sH = _seasonal(t, p[2], p[3], p[4])
        lt = np.log(t)
        eta = p[0] + p[1] * lt + sv
        g = np.concatenate([np.ones(t.shape + (1,)), lt[..., None], sg], axis=-1)
        H = np.zeros(t.shape + (5, 5))
        H[..., 2:, 2:] = sH
        return eta, g, H

    def scalar_value(self, t, p):
        phi = 2.0 * math.pi * t / p[4]
        return math.exp(p[0] + p[1] * math.log(t) + p[2] * math.cos(phi) + p[3] * math.sin(phi))

    def eta(self, t, p):
        phi = 2.0 * np.pi * t / p[4]
        return p[0] + p[1] * np.log(t) + p[2] * np.cos(phi) + p[3] * np.sin(phi)


class _QuadPeriodic(_ReportingFamily):
    name = "quad_periodic"
    param_names = ("log_level", "trend", "curvature", "cos", "sin", "period")
    positive = (5,)

    def log_terms(self, t, p):
        sv, sg, sH = _seasonal(t, p[3], p[4], p[5])
        eta = p[0] + p[1] * t + p[2] * t * t + sv
        g = np.concatenate([np.stack([np.ones_like(t), t, t * t], axis=-1), sg], axis=-1)
        H = np.zeros(t.shape + (6, 6))
        H[..., 3:, 3:] = sH
        return eta, g, H

    def eta(self, t, p):
        phi = 2.0 * np.pi * t / p[5]
        return p[0] + p[1] * t + p[2] * t * t + p[3] * np.cos(phi) + p[4] * np.sin(phi)

    def scalar_value(self, t, p):
        phi = 2.0 * math.pi * t / p[5]
        return math.exp(
            p[0] + p[1] * t + p[2] * t * t + p[3] * math.cos(phi) + p[4] * math.sin(phi)
        )


@dataclass(frozen=True)
class CustomIntensity:
    """User-supplied reporting intensity.

    ``func(t, params)`` must accept an array ``t`` and return psi(t) > 0.
    ``grad`` and ``hessian`` (optional) return arrays of shape ``t.shape +
    (q,)`` and ``t.shape + (q, q)``.
    """

    name: str
    n_params: int
    func: Callable
    grad: Optional[Callable] = None
    hessian: Optional[Callable] = None
    positive: tuple[int, ...] = ()
    t_floor: float = 0.0
    monotone: bool = False


class _CustomFamily(_ReportingFamily):
    closed_cumulative = False

    def __init__(self, custom: CustomIntensity):
        self.custom = custom
        self.name = custom.name
        self.param_names = tuple(f"p{j}" for j in range(custom.n_params))
        self.positive = tuple(custom.positive)
        self.t_floor = custom.t_floor
        self.monotone = custom.monotone

    def value(self, t, p):
        return np.asarray(self.custom.func(t, p), dtype=float) * np.ones_like(t)

    def grad(self, t, p):
        if self.custom.grad is not None:
            return np.asarray(self.custom.grad(t, p), dtype=float)
        return num.fd_grad(lambda q: self.value(t, q), p)

    def hess(self, t, p):
        if self.custom.hessian is not None:
            return np.asarray(self.custom.hessian(t, p), dtype=float)
        if self.custom.grad is not None:
            return num.fd_hess_from_grad(lambda q: self.grad(t, q), p)
        return num.fd_hess(lambda q: self.value(t, q), p)

    def dlog(self, t, p):
        return self.grad(t, p) / self.value(t, p)[..., None]

    def d2log(self, t, p):
        v = self.value(t, p)[..., None, None]
        g = self.grad(t, p)
        return self.hess(t, p) / v - _outer(g) / v ** 2


REPORTING_FAMILIES = {
    f.name: f for f in (_Constant(), _Exponential(), _LogPeriodic(), _QuadPeriodic())
}


def _as_array(x):
    a = np.asarray(x, dtype=float)
    return a, a.ndim == 0


@dataclass(frozen=True)
class IntensityModel:
    """Reporting intensity psi(t; params) of a given family."""

    family: str
    params: tuple[float, ...]
    custom: Optional[CustomIntensity] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(x) for x in np.ravel(self.params)))
        spec = self.spec
        if len(self.params) != spec.n_params:
            raise ParameterError(
                f"{self.family}: expected {spec.n_params} parameters, got {len(self.params)}"
            )
        if not all(math.isfinite(x) for x in self.params):
            raise ParameterError(f"{self.family}: non-finite parameter")
        spec.validate(self.params)

    @property
    def spec(self) -> _ReportingFamily:
        if self.custom is not None:
            return _CustomFamily(self.custom)
        try:
            return REPORTING_FAMILIES[self.family]
        except KeyError:
            raise InputError(f"unknown reporting intensity family {self.family!r}") from None

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def t_floor(self) -> float:
        return self.spec.t_floor

    def with_params(self, params) -> "IntensityModel":
        return IntensityModel(self.family, tuple(params), self.custom)

    def _check_t(self, t):
        if t.size and (np.any(np.isnan(t)) or np.min(t) < self.t_floor or np.min(t) < 0):
            raise DomainError(f"{self.family}: time must be >= {self.t_floor}")

    def _call(self, method, t):
        t, scalar = _as_array(t)
        self._check_t(t)
        out = getattr(self.spec, method)(np.atleast_1d(t), np.asarray(self.params))
        if scalar:
            out = out[0]
            return float(out) if np.ndim(out) == 0 else out
        return out

    def eval(self, t):
        """psi(t)."""
        return self._call("value", t)

    def grad(self, t):
        """d psi / d params, shape t.shape + (q,)."""
        return self._call("grad", t)

    def hessian(self, t):
        """d^2 psi / d params^2, shape t.shape + (q, q)."""
        return self._call("hess", t)

    def dlog(self, t):
        return self._call("dlog", t)

    def d2log(self, t):
        return self._call("d2log", t)

    # cumulative ---------------------------------------------------------

    def _lower(self):
        return self.t_floor

    def cumulative(self, t):
        """Psi(t) = integral of psi over [0, t]."""
        t_arr, scalar = _as_array(t)
        if t_arr.size and np.min(t_arr) < 0:
            raise DomainError(f"{self.family}: time must be >= 0")
        spec, p = self.spec, np.asarray(self.params)
        if spec.closed_cumulative:
            out = spec.cumulative_terms(t_arr, p)[0]
        else:
            lo = self._lower()
            f = lambda z: spec.scalar_value(z, p)
            out = np.array([num.integrate(f, lo, x) if x > lo else 0.0 for x in t_arr.ravel()])
            out = out.reshape(t_arr.shape)
        return float(out) if scalar else out

    def cumulative_grad(self, t: float):
        """(Psi(t), d Psi / d params) at a scalar t."""
        t = float(t)
        spec, p = self.spec, np.asarray(self.params)
        if spec.closed_cumulative:
            v, g, _ = spec.cumulative_terms(np.asarray(t), p)
            return float(v), np.asarray(g, dtype=float)
        lo = self._lower()
        if t <= lo:
            return 0.0, np.zeros(self.n_params)

        def f(z):
            z = np.asarray(z, dtype=float)
            return np.concatenate([[spec.value(z, p)], spec.grad(z, p)])

        out = num.integrate_vec(f, lo, t)
        return float(out[0]), out[1:]

    def cumulative_hessian(self, t: float):
        """d^2 Psi(t) / d params^2 at a scalar t."""
        t = float(t)
        spec, p = self.spec, np.asarray(self.params)
        if spec.closed_cumulative:
            return np.asarray(spec.cumulative_terms(np.asarray(t), p)[2], dtype=float)
        lo = self._lower()
        if t <= lo:
            return np.zeros((self.n_params, self.n_params))
        return num.integrate_vec(lambda z: spec.hess(np.asarray(z, dtype=float), p), lo, t)

    def information(self, t: float):
        """I(t) = integral over [0, t] of grad psi grad psi^T / psi, by quadrature."""
        t = float(t)
        spec, p = self.spec, np.asarray(self.params)
        lo = self._lower()

        def f(z):
            z = np.asarray(z, dtype=float)
            return _outer(spec.grad(z, p)) / spec.value(z, p)

        return num.integrate_vec(f, lo, t)

    # bounds ---------------------------------------------------------------

    def upper_bound(self, lo: float, hi: float, n_grid: int = BOUND_GRID) -> float:
        """A majorant of psi on [lo, hi] for thinning."""
        if not lo < hi:
            raise DomainError(f"upper_bound needs lo < hi, got [{lo}, {hi}]")
        lo = max(lo, self.t_floor)
        spec, p = self.spec, np.asarray(self.params)
        f = lambda x: spec.value(np.asarray(x, dtype=float), p)
        if spec.monotone:
            b = float(max(f(lo), f(hi)))
            if not math.isfinite(b):
                raise NumericalError(f"{self.family}: non-finite intensity on [{lo}, {hi}]")
            return b
        return _grid_bound(f, lo, hi, n_grid, self.family)

    # serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityModel":
        extra = set(d) - {"family", "params"}
        if extra:
            raise InputError(f"unknown keys in intensity model: {sorted(extra)}")
        return cls(d["family"], tuple(d["params"]))

    @classmethod
    def from_json(cls, text: str) -> "IntensityModel":
        return cls.from_dict(json.loads(text))


def _grid_bound(f, lo, hi, n_grid, label):
    xs = np.linspace(lo, hi, n_grid)
    vals = np.asarray(f(xs), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericalError(f"{label}: non-finite intensity on [{lo}, {hi}]")
    # local maxima of the grid (endpoints included), refined by golden section
    left = np.concatenate([[-np.inf], vals[:-1]])
    right = np.concatenate([vals[1:], [-np.inf]])
    peaks = np.flatnonzero((vals >= left) & (vals >= right))
    peaks = peaks[np.argsort(vals[peaks])[::-1][:8]]
    best = float(vals.max())
    g = lambda x: float(f(np.asarray(x)))
    for k in peaks:
        a, b = xs[max(k - 1, 0)], xs[min(k + 1, n_grid - 1)]
        _, v = num.golden_max(g, a, b)
        if not math.isfinite(v):
            raise NumericalError(f"{label}: non-finite intensity on [{lo}, {hi}]")
        best = max(best, v)
    return BOUND_SAFETY * best


# ---------------------------------------------------------------------------
# mark (payment) families; s = tau - z >= 0 is the time since reporting

class _MarkFamily:
    name = ""
    param_names: tuple[str, ...] = ()
    positive: tuple[int, ...] = ()
    n_baseline = 0
    monotone = True
    closed_form = True

    @property
    def n_params(self):
        return len(self.param_names)

    def needs_inversion(self, p) -> bool:
        """True when lambda is unbounded at s = 0 and must be sampled by inversion."""
        return False

    def validate(self, p):
        for j in self.positive:
            if not p[j] > 0:
                raise ParameterError(f"{self.name}: parameter {self.param_names[j]} must be > 0")

    def log_terms(self, s, z, p):
        raise NotImplementedError

    def value(self, s, z, p):
        return np.exp(self.log_terms(s, z, p)[0])

    def grad(self, s, z, p):
        eta, g, _ = self.log_terms(s, z, p)
        return np.exp(eta)[..., None] * g

    def hess(self, s, z, p):
        eta, g, H = self.log_terms(s, z, p)
        return np.exp(eta)[..., None, None] * (H + _outer(g))

    def dlog(self, s, z, p):
        return self.log_terms(s, z, p)[1]

    def d2log(self, s, z, p):
        return self.log_terms(s, z, p)[2]

    def cumulative_terms(self, T, z, p):
        """(Lambda, dLambda, d2Lambda) over s in [0, T]."""
        raise NotImplementedError

    def information_terms(self, T, z, p):
        raise NotImplementedError


class _ConstantMark(_MarkFamily):
    name = "constant_mark"
    param_names = ("rate",)
    positive = (0,)

    def validate(self, p):
        if not p[0] >= 0:
            raise ParameterError("constant_mark: rate must be >= 0")

    def value(self, s, z, p):
        return np.full(np.broadcast(s, z).shape, p[0])

    def grad(self, s, z, p):
        return np.ones(np.broadcast(s, z).shape + (1,))

    def hess(self, s, z, p):
        return np.zeros(np.broadcast(s, z).shape + (1, 1))

    def dlog(self, s, z, p):
        return np.full(np.broadcast(s, z).shape + (1,), 1.0 / p[0])

    def d2log(self, s, z, p):
        return np.full(np.broadcast(s, z).shape + (1, 1), -1.0 / p[0] ** 2)

    def cumulative_terms(self, T, z, p):
        T = T * np.ones_like(z)
        return p[0] * T, T[..., None], np.zeros(T.shape + (1, 1))

    def information_terms(self, T, z, p):
        T = T * np.ones_like(z)
        return (T / p[0])[..., None, None]


class _WeibullBaseline(_MarkFamily):
    name = "weibull_baseline"
    param_names = ("shape", "scale", "z_effect")
    positive = (0, 1)
    n_baseline = 2

    def needs_inversion(self, p) -> bool:
        return p[0] < 1.0

    def inverse_cumulative(self, L, z, p):
        """s with Lambda(z + s, z) = L."""
        return np.power(L / (p[1] * np.exp(p[2] * z)), 1.0 / p[0])

    def log_terms(self, s, z, p):
        s, z = np.broadcast_arrays(s, z)
        with np.errstate(divide="ignore"):
            ls = np.log(s)
        eta = math.log(p[0] * p[1]) + (p[0] - 1.0) * ls + p[2] * z
        g = np.stack([1.0 / p[0] + ls, np.full(s.shape, 1.0 / p[1]), z], axis=-1)
        H = np.zeros(s.shape + (3, 3))
        H[..., 0, 0] = -1.0 / p[0] ** 2
        H[..., 1, 1] = -1.0 / p[1] ** 2
        return eta, g, H

    def value(self, s, z, p):
        with np.errstate(divide="ignore"):
            return p[0] * p[1] * np.power(s, p[0] - 1.0) * np.exp(p[2] * z)

    def grad(self, s, z, p):
        v = self.value(s, z, p)
        with np.errstate(invalid="ignore"):
            out = v[..., None] * self.log_terms(s, z, p)[1]
        return np.where((v == 0)[..., None], 0.0, out)

    def hess(self, s, z, p):
        v = self.value(s, z, p)
        _, g, H = self.log_terms(s, z, p)
        with np.errstate(invalid="ignore"):
            out = v[..., None, None] * (H + _outer(g))
        return np.where((v == 0)[..., None, None], 0.0, out)

    def cumulative_terms(self, T, z, p):
        T, z = np.broadcast_arrays(np.asarray(T, dtype=float), np.asarray(z, dtype=float))
        pos = T > 0
        with np.errstate(divide="ignore"):
            L = np.where(pos, np.log(np.where(pos, T, 1.0)), 0.0)
        lam = p[1] * np.power(T, p[0]) * np.exp(p[2] * z)
        d = np.stack([lam * L, lam / p[1], lam * z], axis=-1)
        H = np.zeros(T.shape + (3, 3))
        H[..., 0, 0] = lam * L * L
        H[..., 0, 1] = H[..., 1, 0] = lam * L / p[1]
        H[..., 0, 2] = H[..., 2, 0] = lam * z * L
        H[..., 1, 2] = H[..., 2, 1] = lam * z / p[1]
        H[..., 2, 2] = lam * z * z
        return lam, d, H

    def information_terms(self, T, z, p):
        T, z = np.broadcast_arrays(np.asarray(T, dtype=float), np.asarray(z, dtype=float))
        k = p[0]
        pos = T > 0
        L = np.where(pos, np.log(np.where(pos, T, 1.0)), 0.0)
        V = np.power(T, k)
        K = p[1] * np.exp(p[2] * z)
        # integrals of k s^(k-1) log^j s over [0, T]
        I0 = V
        I1 = V * (L - 1.0 / k)
        I2 = V * (L * L - 2.0 * L / k + 2.0 / k ** 2)
        A = I0 / k + I1  # integral of k s^(k-1) (1/k + log s)
        J = np.zeros(T.shape + (3, 3))
        J[..., 0, 0] = K * (I0 / k ** 2 + 2.0 * I1 / k + I2)
        J[..., 0, 1] = J[..., 1, 0] = K * A / p[1]
        J[..., 0, 2] = J[..., 2, 0] = K * z * A
        J[..., 1, 1] = K * I0 / p[1] ** 2
        J[..., 1, 2] = J[..., 2, 1] = K * z * I0 / p[1]
        J[..., 2, 2] = K * z * z * I0
        return J


class _ExpTrendPeriodic(_MarkFamily):
    name = "exp_trend_periodic"
    param_names = ("log_level", "decay", "cos", "sin", "period")
    positive = (4,)
    n_baseline = 2

    def log_terms(self, s, z, p):
        s, z = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(z, dtype=float))
        sv, sg, sH = _seasonal(z, p[2], p[3], p[4])
        eta = p[0] + p[1] * s + sv
        g = np.concatenate([np.stack([np.ones_like(s), s], axis=-1), sg], axis=-1)
        H = np.zeros(s.shape + (5, 5))
        H[..., 2:, 2:] = sH
        return eta, g, H

    def value(self, s, z, p):
        phi = 2.0 * np.pi * np.asarray(z, dtype=float) / p[4]
        return np.exp(p[0] + p[1] * np.asarray(s, dtype=float) + p[2] * np.cos(phi) + p[3] * np.sin(phi))

    def _blocks(self, T, z, p, with_curvature):
        T, z = np.broadcast_arrays(np.asarray(T, dtype=float), np.asarray(z, dtype=float))
        sv, sg, sH = _seasonal(z, p[2], p[3], p[4])
        m = num.exp_moments(p[1], T, 2)
        e = np.exp(p[0] + sv)
        m0, m1, m2 = e * m[0], e * m[1], e * m[2]
        M = np.zeros(T.shape + (5, 5))
        M[..., 0, 0] = m0
        M[..., 0, 1] = M[..., 1, 0] = m1
        M[..., 1, 1] = m2
        M[..., 0, 2:] = M[..., 2:, 0] = m0[..., None] * sg
        M[..., 1, 2:] = M[..., 2:, 1] = m1[..., None] * sg
        M[..., 2:, 2:] = m0[..., None, None] * (_outer(sg) + (sH if with_curvature else 0.0))
        d = np.concatenate([np.stack([m0, m1], axis=-1), m0[..., None] * sg], axis=-1)
        return m0, d, M

    def cumulative_terms(self, T, z, p):
        return self._blocks(T, z, p, True)

    def information_terms(self, T, z, p):
        return self._blocks(T, z, p, False)[2]


@dataclass(frozen=True)
class CustomMarkIntensity:
    """User-supplied mark intensity ``func(tau, z, params)`` valid for tau >= z."""

    name: str
    n_params: int
    func: Callable
    grad: Optional[Callable] = None
    hessian: Optional[Callable] = None
    positive: tuple[int, ...] = ()
    monotone: bool = False


class _CustomMarkFamily(_MarkFamily):
    closed_form = False

    def __init__(self, custom: CustomMarkIntensity):
        self.custom = custom
        self.name = custom.name
        self.param_names = tuple(f"p{j}" for j in range(custom.n_params))
        self.positive = tuple(custom.positive)
        self.monotone = custom.monotone

    def value(self, s, z, p):
        s, z = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(z, dtype=float))
        return np.asarray(self.custom.func(s + z, z, p), dtype=float) * np.ones_like(s)

    def grad(self, s, z, p):
        if self.custom.grad is not None:
            return np.asarray(self.custom.grad(s + z, z, p), dtype=float)
        return num.fd_grad(lambda q: self.value(s, z, q), p)

    def hess(self, s, z, p):
        if self.custom.hessian is not None:
            return np.asarray(self.custom.hessian(s + z, z, p), dtype=float)
        if self.custom.grad is not None:
            return num.fd_hess_from_grad(lambda q: self.grad(s, z, q), p)
        return num.fd_hess(lambda q: self.value(s, z, q), p)

    def dlog(self, s, z, p):
        return self.grad(s, z, p) / self.value(s, z, p)[..., None]

    def d2log(self, s, z, p):
        v = self.value(s, z, p)[..., None, None]
        return self.hess(s, z, p) / v - _outer(self.grad(s, z, p)) / v ** 2


MARK_FAMILIES = {
    f.name: f for f in (_ConstantMark(), _WeibullBaseline(), _ExpTrendPeriodic())
}


@dataclass(frozen=True)
class MarkIntensityModel:
    """Payment intensity lambda(tau, z; params) of a claim reported at z."""

    family: str
    params: tuple[float, ...]
    custom: Optional[CustomMarkIntensity] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(x) for x in np.ravel(self.params)))
        spec = self.spec
        if len(self.params) != spec.n_params:
            raise ParameterError(
                f"{self.family}: expected {spec.n_params} parameters, got {len(self.params)}"
            )
        if not all(math.isfinite(x) for x in self.params):
            raise ParameterError(f"{self.family}: non-finite parameter")
        spec.validate(self.params)

    @property
    def spec(self) -> _MarkFamily:
        if self.custom is not None:
            return _CustomMarkFamily(self.custom)
        try:
            return MARK_FAMILIES[self.family]
        except KeyError:
            raise InputError(f"unknown mark intensity family {self.family!r}") from None

    @property
    def n_params(self) -> int:
        return len(self.params)

    def with_params(self, params) -> "MarkIntensityModel":
        return MarkIntensityModel(self.family, tuple(params), self.custom)

    def split_params(self):
        """(baseline nu, covariate effect eta) for the decomposed families."""
        k = self.spec.n_baseline
        return self.params[:k], self.params[k:]

    def _masked(self, method, tau, z, trailing):
        tau = np.asarray(tau, dtype=float)
        z = np.asarray(z, dtype=float)
        tau_b, z_b = np.broadcast_arrays(tau, z)
        scalar = tau_b.ndim == 0
        tau_b, z_b = np.atleast_1d(tau_b), np.atleast_1d(z_b)
        s = tau_b - z_b
        q = self.n_params
        shape = s.shape + (q,) * trailing
        out = np.zeros(shape)
        on = s >= 0
        if np.any(on):
            out[on] = getattr(self.spec, method)(s[on], z_b[on], np.asarray(self.params))
        return out[0] if scalar else out

    def eval(self, tau, z):
        """lambda(tau, z); zero for tau < z."""
        out = self._masked("value", tau, z, 0)
        return float(out) if np.ndim(out) == 0 else out

    def grad(self, tau, z):
        return self._masked("grad", tau, z, 1)

    def hessian(self, tau, z):
        return self._masked("hess", tau, z, 2)

    def dlog(self, tau, z):
        """d log lambda / d params at tau >= z."""
        tau, z = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(z, dtype=float))
        return self.spec.dlog(tau - z, z, np.asarray(self.params))

    def d2log(self, tau, z):
        tau, z = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(z, dtype=float))
        return self.spec.d2log(tau - z, z, np.asarray(self.params))

    def log_eval(self, tau, z):
        """log lambda(tau, z) at tau >= z (vectorised, no masking)."""
        tau, z = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(z, dtype=float))
        spec, p = self.spec, np.asarray(self.params)
        if type(spec).log_terms is not _MarkFamily.log_terms:
            return spec.log_terms(tau - z, z, p)[0]
        with np.errstate(divide="ignore"):
            return np.log(spec.value(tau - z, z, p))

    # cumulative -----------------------------------------------------------

    def _quad_terms(self, T, z, what):
        spec, p = self.spec, np.asarray(self.params)
        out = []
        for Ti, zi in zip(np.ravel(T), np.ravel(z)):
            zi = float(zi)
            if what == "value":
                f = lambda s: np.atleast_1d(spec.value(np.asarray(s), np.asarray(zi), p))
            elif what == "grad":
                f = lambda s: spec.grad(np.asarray(s), np.asarray(zi), p)
            elif what == "hess":
                f = lambda s: spec.hess(np.asarray(s), np.asarray(zi), p)
            else:
                f = lambda s: (
                    _outer(spec.grad(np.asarray(s), np.asarray(zi), p))
                    / spec.value(np.asarray(s), np.asarray(zi), p)
                )
            out.append(num.integrate_vec(f, 0.0, float(Ti)))
        return np.array(out).reshape(np.shape(T) + out[0].shape) if out else np.zeros(np.shape(T))

    def _T(self, t, z):
        t, z = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(z, dtype=float))
        return np.maximum(t - z, 0.0), z

    def cumulative(self, t, z):
        """Lambda(t, z) = integral of lambda(tau, z) over tau in [z, t]."""
        T, z = self._T(t, z)
        if self.spec.closed_form:
            out = self.spec.cumulative_terms(T, z, np.asarray(self.params))[0]
        else:
            out = self._quad_terms(T, z, "value").reshape(T.shape)
        return float(out) if np.ndim(out) == 0 else out

    def cumulative_grad(self, t, z):
        T, z = self._T(t, z)
        if self.spec.closed_form:
            return self.spec.cumulative_terms(T, z, np.asarray(self.params))[1]
        return self._quad_terms(T, z, "grad")

    def cumulative_hessian(self, t, z):
        T, z = self._T(t, z)
        if self.spec.closed_form:
            return self.spec.cumulative_terms(T, z, np.asarray(self.params))[2]
        return self._quad_terms(T, z, "hess")

    def information(self, t, z, method: str = "auto"):
        """Per-claim J_i(t) = integral over [z, t] of grad lambda grad lambda^T / lambda."""
        T, z = self._T(t, z)
        if method == "auto" and self.spec.closed_form:
            return self.spec.information_terms(T, z, np.asarray(self.params))
        return self._quad_terms(T, z, "info")

    # bounds ---------------------------------------------------------------

    def upper_bound(self, lo: float, hi: float, z: float, n_grid: int = BOUND_GRID) -> float:
        """A majorant of lambda(., z) on [lo, hi]."""
        if not lo < hi:
            raise DomainError(f"upper_bound needs lo < hi, got [{lo}, {hi}]")
        if hi < z:
            return 0.0
        lo = max(lo, z)
        if self.spec.monotone:
            b = float(self.cell_bounds(np.array([lo]), np.array([hi]), np.array([z]))[0])
            return b
        f = lambda x: self.eval(x, z)
        return _grid_bound(f, lo, hi, n_grid, self.family)

    def cell_bounds(self, lo, hi, z):
        """Exact suprema on [lo_k, hi_k] for families monotone in tau (vectorised)."""
        lo, hi, z = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (lo, hi, z)))
        a = np.maximum(lo, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.maximum(self.eval(a, z), self.eval(hi, z))
        b = np.where(hi < z, 0.0, b)
        if not np.all(np.isfinite(b)):
            raise NumericalError(f"{self.family}: intensity is unbounded on a window")
        return b

    # serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MarkIntensityModel":
        extra = set(d) - {"family", "params"}
        if extra:
            raise InputError(f"unknown keys in mark model: {sorted(extra)}")
        return cls(d["family"], tuple(d["params"]))

    @classmethod
    def from_json(cls, text: str) -> "MarkIntensityModel":
        return cls.from_dict(json.loads(text))
