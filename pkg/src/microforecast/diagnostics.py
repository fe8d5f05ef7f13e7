"""Plot-ready diagnostic tables: intensity fit, quarterly delay back-test, PIT pairs."""

from __future__ import annotations

import datetime as dt
import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .claims_data import Portfolio
from .cond_dist import CondDistModel, mean as cond_mean, pit_transform
from .errors import InputError
from .intensity import IntensityModel

MIN_PAIRS = 5


def intensity_fit_series(p: Portfolio, model: IntensityModel, grid: Sequence[float]) -> pd.DataFrame:
    """Observed M(t) next to the fitted Psi(t) and psi(t).

    Grid points beyond the horizon carry ``observed_M`` = NaN and
    ``extrapolated`` = True.
    """
    t = np.asarray(grid, dtype=float)
    if t.size == 0:
        return pd.DataFrame(
            {"t": [], "observed_M": [], "fitted_Psi": [], "fitted_psi": [], "extrapolated": []}
        )
    if np.any(t < 0):
        raise InputError("grid must be >= 0")
    a = p.horizon_a
    inside = t <= a
    observed = np.full(t.size, np.nan)
    observed[inside] = np.searchsorted(p.reporting_times, t[inside], side="right")
    Psi = np.asarray(model.cumulative(t), dtype=float).reshape(t.shape)
    psi = np.full(t.size, np.nan)
    ok = t >= model.t_floor
    if np.any(ok):
        psi[ok] = model.eval(t[ok])
    return pd.DataFrame(
        {"t": t, "observed_M": observed, "fitted_Psi": Psi, "fitted_psi": psi, "extrapolated": ~inside}
    )


def calendar_quarters(origin: dt.date, horizon_a: float) -> list[tuple[str, float, float]]:
    """(label, lo, hi) day offsets of the calendar quarters covering [0, horizon_a]."""
    origin_dt = dt.datetime.combine(origin, dt.time())
    end = origin_dt + dt.timedelta(days=horizon_a)
    q0 = (origin.month - 1) // 3
    start = dt.datetime(origin.year, 3 * q0 + 1, 1)
    out = []
    while start <= end:
        month = start.month + 3
        nxt = dt.datetime(start.year + (month > 12), (month - 1) % 12 + 1, 1)
        label = f"{start.year}-Q{(start.month - 1) // 3 + 1}"
        lo = (start - origin_dt).total_seconds() / 86400.0
        hi = (nxt - origin_dt).total_seconds() / 86400.0
        out.append((label, lo, hi))
        start = nxt
    return out


def quarterly_delay_backtest(
    p: Portfolio,
    delay: CondDistModel,
    quarters: Optional[Sequence[Sequence[float]]] = None,
) -> pd.DataFrame:
    """Observed mean delay vs. model mean delay per quarter of reporting time.

    Claims belong to the quarter with lo <= Z < hi. ``quarters`` defaults to
    calendar quarters counted from the portfolio's origin date.
    """
    if quarters is None:
        spec = calendar_quarters(p.origin_date, p.horizon_a)
    else:
        spec = [(f"[{float(lo):g}, {float(hi):g})", float(lo), float(hi)) for lo, hi in quarters]
    Z, W = p.reporting_times, p.delays
    rows = []
    for label, lo, hi in spec:
        sel = (Z >= lo) & (Z < hi)
        n = int(sel.sum())
        if n:
            pred = float(np.mean(cond_mean(delay, Z[sel])))
            obs = float(np.mean(W[sel]))
            sd = float(np.std(W[sel], ddof=1)) if n >= 2 else math.nan
        else:
            pred = obs = sd = math.nan
        rows.append(
            {
                "quarter": label,
                "lo": lo,
                "hi": hi,
                "n_claims": n,
                "observed_mean_delay": obs,
                "predicted_mean_delay": pred,
                "observed_sd": sd,
            }
        )
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class IndependenceGrid:
    samples: pd.DataFrame
    correlations: pd.DataFrame


def independence_grid(
    p: Portfolio,
    delay: CondDistModel,
    amounts: CondDistModel,
    max_payments: int = 4,
) -> IndependenceGrid:
    """Normal-scale PIT values of W and of X_1..X_k per claim, and their pairwise correlations.

    A pair is flagged when |corr| > 3 / sqrt(n), n being the number of claims
    with both values present. Cells with fewer than 5 pairs are marked
    insufficient and get no correlation.
    """
    if max_payments < 2:
        raise InputError("max_payments must be >= 2")
    Z = p.reporting_times
    cols = {"claim_id": [r.claim_id for r in p.records], "W": np.full(len(p), np.nan)}
    if len(p):
        cols["W"] = pit_transform(delay, np.column_stack([Z, p.delays]))
    for k in range(1, max_payments + 1):
        has = p.payment_counts >= k
        v = np.full(len(p), np.nan)
        if np.any(has):
            xk = np.array([r.payments[k - 1][1] for r, h in zip(p.records, has) if h])
            v[has] = pit_transform(amounts, np.column_stack([Z[has], xk]))
        cols[f"X{k}"] = v
    samples = pd.DataFrame(cols)
    names = ["W"] + [f"X{k}" for k in range(1, max_payments + 1)]
    rows = []
    for u, v in itertools.combinations(names, 2):
        both = samples[[u, v]].dropna()
        n = len(both)
        thr = 3.0 / math.sqrt(n) if n else math.inf
        if n < MIN_PAIRS:
            corr, insufficient = math.nan, True
        else:
            a, b = both[u].to_numpy(), both[v].to_numpy()
            corr = float(np.corrcoef(a, b)[0, 1]) if a.std() > 0 and b.std() > 0 else math.nan
            insufficient = False
        flagged = bool(not insufficient and math.isfinite(corr) and abs(corr) > thr)
        rows.append(
            {"var1": u, "var2": v, "n": n, "corr": corr, "threshold": thr,
             "flagged": flagged, "insufficient": insufficient}
        )
    return IndependenceGrid(samples, pd.DataFrame(rows))
