"""Predictive distribution of future payment totals, and occurrence-time intensity.

``predict_total`` simulates S replicates of the reports and payments falling
in (a, b] and sums the amounts per replicate. ``occurrence_intensity``
maps the reporting intensity back to occurrence times: for Z = T + W with a
delay density f_W(. | z),

    mu(t) = integral over z >= t of psi(z) f_W(z - t | z) dz.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _numerics as num
from .claims_data import Portfolio
from .cond_dist import CondDistModel, _cdf_cd, _logpdf_cd, _params_at, quantile
from .errors import DomainError, InputError, MicroforecastError, NumericalError, SimulationError
from .intensity import IntensityModel, MarkIntensityModel
from .simulate import RngStream, sample_marked_block

DEFAULT_S = 10_000
BLOCK_SIZE = 50
PCT_LO = 0.5
PCT_HI = 99.5
DELAY_TAIL = 1e-8
MU_EPSREL = 1e-7


@dataclass(frozen=True)
class PredictiveDistribution:
    totals: np.ndarray
    window: tuple[float, float]

    def __post_init__(self):
        t = np.sort(np.asarray(self.totals, dtype=float))
        object.__setattr__(self, "totals", t)
        object.__setattr__(self, "window", (float(self.window[0]), float(self.window[1])))

    @property
    def S(self) -> int:
        return int(self.totals.size)

    def to_dict(self) -> dict:
        return {
            "window": list(self.window),
            "S": self.S,
            "totals": [float(x) for x in self.totals],
            "summary": summarize(self),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def summarize(d: PredictiveDistribution) -> dict:
    """mean, median, sd, cv and the 0.5% / 99.5% percentiles (linear interpolation).

    sd and cv are ``None`` for fewer than two replicates; cv is ``None`` when
    the mean is zero.
    """
    x = d.totals
    if x.size == 0:
        raise InputError("empty predictive distribution")
    mean = float(np.mean(x))
    sd = float(np.std(x, ddof=1)) if x.size >= 2 else None
    cv = sd / mean if (sd is not None and mean != 0.0) else None
    lo, med, hi = np.percentile(x, [PCT_LO, 50.0, PCT_HI], method="linear")
    return {
        "mean": mean,
        "median": float(med),
        "sd": sd,
        "cv": cv,
        "pct_lo": float(lo),
        "pct_hi": float(hi),
    }


def _block_totals(args):
    reporting, mark, amounts, window, p, seed, block, n = args
    try:
        blk = sample_marked_block(reporting, mark, amounts, window, p, RngStream(seed, block), n)
    except MicroforecastError as exc:
        raise SimulationError(str(exc), block * BLOCK_SIZE) from exc
    return blk.totals()


def predict_total(
    p: Portfolio,
    reporting: IntensityModel,
    mark: MarkIntensityModel,
    amounts: CondDistModel,
    b: float,
    S: int = DEFAULT_S,
    seed: int = 0,
    threads: int = 1,
) -> PredictiveDistribution:
    """Monte Carlo distribution of total payments on (horizon_a, b].

    Replicates are simulated in blocks of ``BLOCK_SIZE``; block k uses the
    stream (seed, k), so the output does not depend on ``threads``.
    """
    a = p.horizon_a
    if not b > a:
        raise DomainError(f"prediction end b={b} must exceed the horizon {a}")
    if S < 1:
        raise InputError("S must be >= 1")
    sizes = [min(BLOCK_SIZE, S - k) for k in range(0, S, BLOCK_SIZE)]
    jobs = [(reporting, mark, amounts, (a, b), p, seed, k, n) for k, n in enumerate(sizes)]
    if threads <= 1 or len(jobs) == 1:
        parts = [_block_totals(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_block_totals, jobs))
    totals = np.concatenate(parts)
    return PredictiveDistribution(totals, (a, b))


# ---------------------------------------------------------------------------
# occurrence intensity

@dataclass(frozen=True)
class OccurrenceIntensity:
    grid: np.ndarray
    values: np.ndarray
    horizon_a: float
    z_max: float
    extrapolated: bool = field(default=False)

    def to_rows(self):
        return [(float(t), float(v)) for t, v in zip(self.grid, self.values)]


def delay_z_max(delay: CondDistModel, horizon_a: float, n: int = 65) -> float:
    """horizon_a plus the largest (1 - 1e-8) delay quantile over [0, horizon_a]."""
    zs = np.linspace(0.0, max(horizon_a, 0.0), n)
    q = np.asarray(quantile(delay, 1.0 - DELAY_TAIL, zs), dtype=float)
    return float(horizon_a + np.max(q))


def _delay_breaks(delay: CondDistModel, t: float):
    levels = (1e-10, 1e-3, 0.1, 0.5, 0.9, 0.999, 1.0 - 1e-10)
    try:
        return [float(q) for q in np.asarray(quantile(delay, levels, t), dtype=float)]
    except MicroforecastError:
        return []


def _integrate_pieces(f, lo, hi, breaks, epsrel):
    """Sum of quadratures between breakpoints; accuracy is judged on the total."""
    pts = sorted({lo, hi, *(x for x in breaks if lo < x < hi)})
    total = err = 0.0
    converged = True
    for x0, x1 in zip(pts[:-1], pts[1:]):
        v, e, ok = num.integrate_with_error(f, x0, x1, epsabs=0.0, epsrel=epsrel, limit=500)
        total += v
        err += e
        converged &= ok
    if not converged and err > 100 * epsrel * abs(total):
        raise NumericalError(f"quadrature on [{lo}, {hi}] did not converge", err)
    return total


def _with_context(exc: NumericalError, where: str) -> NumericalError:
    out = NumericalError(f"{where}: {exc.args[0]}")
    out.achieved_tolerance = exc.achieved_tolerance
    return out


def _mu_at(reporting, delay, t, z_max):
    lo = max(t, reporting.t_floor)
    if lo >= z_max:
        return 0.0
    fam = delay.family

    def f(z):
        c, d = _params_at(delay, z)
        w = z - t
        if w <= 0.0 and fam == "lognormal":
            return 0.0
        return reporting.spec.scalar_value(z, np.asarray(reporting.params)) * math.exp(
            float(_logpdf_cd(fam, np.asarray(w), c, d))
        )

    breaks = [t + q for q in _delay_breaks(delay, t)]
    return _integrate_pieces(f, lo, z_max, breaks, MU_EPSREL)


def occurrence_intensity(
    reporting: IntensityModel,
    delay: CondDistModel,
    grid: Sequence[float],
    horizon_a: Optional[float] = None,
) -> OccurrenceIntensity:
    """mu(t) on ``grid`` by adaptive quadrature over z in [max(t, 0), z_max].

    The reporting intensity is evaluated up to z_max = horizon_a + delay
    quantile(1 - 1e-8); beyond ``horizon_a`` this is an extrapolation of the
    fitted model and the result is flagged accordingly.
    """
    grid = np.asarray(grid, dtype=float)
    a = float(np.max(grid)) if horizon_a is None else float(horizon_a)
    z_max = delay_z_max(delay, a)
    vals = np.empty(grid.size)
    for k, t in enumerate(grid):
        try:
            vals[k] = _mu_at(reporting, delay, float(t), z_max)
        except NumericalError as exc:
            raise _with_context(exc, f"occurrence intensity at t={t}") from exc
    return OccurrenceIntensity(grid, np.maximum(vals, 0.0), a, z_max, bool(z_max > a))


def backpredict_counts(
    reporting: IntensityModel,
    delay: CondDistModel,
    bins: Sequence[Sequence[float]],
    horizon_a: Optional[float] = None,
) -> np.ndarray:
    """Expected number of occurrences per bin (lo, hi]: the integral of mu over the bin.

    Computed without nesting quadratures by exchanging the order of
    integration: integral over z of psi(z) [F_W(z - lo | z) - F_W(z - hi | z)].
    """
    bins = np.asarray(bins, dtype=float).reshape(-1, 2)
    if np.any(bins[:, 1] < bins[:, 0]):
        raise DomainError("bins must satisfy lo <= hi")
    a = float(np.max(bins)) if horizon_a is None else float(horizon_a)
    z_max = delay_z_max(delay, a)
    p = np.asarray(reporting.params)
    fam = delay.family
    out = np.empty(len(bins))
    for k, (lo, hi) in enumerate(bins):
        zlo = max(lo, reporting.t_floor)
        if zlo >= z_max or hi <= lo:
            out[k] = 0.0
            continue

        def f(z, lo=lo, hi=hi):
            c, d = _params_at(delay, z)
            Flo = float(_cdf_cd(fam, np.asarray(z - lo), c, d)) if z > lo else 0.0
            Fhi = float(_cdf_cd(fam, np.asarray(z - hi), c, d)) if z > hi else 0.0
            return reporting.spec.scalar_value(z, p) * (Flo - Fhi)

        breaks = [lo + q for q in _delay_breaks(delay, lo)] + [hi] + [
            hi + q for q in _delay_breaks(delay, hi)
        ]
        try:
            out[k] = _integrate_pieces(f, zlo, z_max, breaks, MU_EPSREL)
        except NumericalError as exc:
            raise _with_context(exc, f"back-predicted count on ({lo}, {hi}]") from exc
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# exports

def write_intensity_csv(oi: OccurrenceIntensity, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mu", "extrapolated"])
        for t, v in oi.to_rows():
            w.writerow([repr(t), repr(v), int(oi.extrapolated)])


def write_counts_csv(bins, counts, path, extrapolated: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "expected_count", "extrapolated"])
        for (lo, hi), c in zip(np.asarray(bins, dtype=float).reshape(-1, 2), counts):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(c)), int(extrapolated)])
