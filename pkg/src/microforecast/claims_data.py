"""Individual claim records, portfolios observed up to a horizon, CSV I/O.

Times are fractional days measured from ``origin_date``. A claim occurs at
``occurrence_time`` (T), is reported at ``reporting_time`` (Z >= T) and is
settled by payments at strictly increasing times U >= Z with positive amounts.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ParseError, ValidationError

CSV_COLUMNS = (
    "claim_id",
    "claim_type",
    "occurrence_date",
    "reporting_date",
    "payment_date",
    "payment_amount",
)

_SECONDS_PER_DAY = 86400.0
_RESOLUTION = 1e-6 / _SECONDS_PER_DAY  # written timestamps carry microseconds


@dataclass(frozen=True)
class ClaimRecord:
    claim_id: str
    claim_type: str
    occurrence_time: float
    reporting_time: float
    payments: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "payments", tuple((float(u), float(x)) for u, x in self.payments)
        )
        if not (math.isfinite(self.occurrence_time) and math.isfinite(self.reporting_time)):
            raise ValidationError("non-finite occurrence or reporting time", self.claim_id)
        if self.occurrence_time > self.reporting_time:
            raise ValidationError(
                f"occurrence time {self.occurrence_time} after reporting time "
                f"{self.reporting_time}",
                self.claim_id,
            )
        prev = -math.inf
        for u, x in self.payments:
            if not (math.isfinite(u) and math.isfinite(x)):
                raise ValidationError("non-finite payment", self.claim_id)
            if u < self.reporting_time:
                raise ValidationError(
                    f"payment at {u} precedes reporting time {self.reporting_time}",
                    self.claim_id,
                )
            if u <= prev:
                raise ValidationError("payment times are not strictly increasing", self.claim_id)
            if x <= 0:
                raise ValidationError(f"non-positive payment amount {x}", self.claim_id)
            prev = u

    @property
    def delay(self) -> float:
        return self.reporting_time - self.occurrence_time

    @property
    def payment_times(self) -> np.ndarray:
        return np.array([u for u, _ in self.payments], dtype=float)

    @property
    def payment_amounts(self) -> np.ndarray:
        return np.array([x for _, x in self.payments], dtype=float)

    @property
    def n_payments(self) -> int:
        return len(self.payments)


def _sort_key(rec: ClaimRecord):
    return (rec.reporting_time, rec.claim_id)


@dataclass(frozen=True)
class Portfolio:
    """Claims reported up to ``horizon_a``, ordered by reporting time.

    Ties in reporting time are broken by ``claim_id``. The portfolio is
    immutable; the array views below are computed once and cached.
    """

    records: tuple[ClaimRecord, ...]
    horizon_a: float
    origin_date: dt.date = field(default=dt.date(2000, 1, 1))

    def __post_init__(self):
        records = tuple(sorted(self.records, key=_sort_key))
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "horizon_a", float(self.horizon_a))
        seen = set()
        for rec in records:
            if rec.claim_id in seen:
                raise ValidationError("duplicate claim id", rec.claim_id)
            seen.add(rec.claim_id)
            if rec.reporting_time > self.horizon_a:
                raise ValidationError(
                    f"reported at {rec.reporting_time} after horizon {self.horizon_a}",
                    rec.claim_id,
                )
            if rec.payments and rec.payments[-1][0] > self.horizon_a:
                raise ValidationError(
                    f"payment at {rec.payments[-1][0]} after horizon {self.horizon_a}",
                    rec.claim_id,
                )

    def __len__(self):
        return len(self.records)

    @cached_property
    def reporting_times(self) -> np.ndarray:
        return np.array([r.reporting_time for r in self.records], dtype=float)

    @cached_property
    def occurrence_times(self) -> np.ndarray:
        return np.array([r.occurrence_time for r in self.records], dtype=float)

    @cached_property
    def delays(self) -> np.ndarray:
        return self.reporting_times - self.occurrence_times

    @cached_property
    def payment_counts(self) -> np.ndarray:
        return np.array([r.n_payments for r in self.records], dtype=int)

    @cached_property
    def payment_owner(self) -> np.ndarray:
        """Index of the owning record for every payment (flattened order)."""
        return np.repeat(np.arange(len(self.records)), self.payment_counts)

    @cached_property
    def payment_times(self) -> np.ndarray:
        return np.array([u for r in self.records for u, _ in r.payments], dtype=float)

    @cached_property
    def payment_amounts(self) -> np.ndarray:
        return np.array([x for r in self.records for _, x in r.payments], dtype=float)

    def with_type(self, claim_type: str) -> "Portfolio":
        return replace(self, records=tuple(r for r in self.records if r.claim_type == claim_type))

    def day_to_datetime(self, t: float) -> dt.datetime:
        origin = dt.datetime.combine(self.origin_date, dt.time())
        return origin + dt.timedelta(days=float(t))


def truncate(p: Portfolio, a: float) -> Portfolio:
    """Portfolio as it would have been observed at horizon ``a``."""
    if a < 0:
        raise DomainError(f"truncation horizon must be >= 0, got {a}")
    kept = []
    for rec in p.records:
        if rec.reporting_time > a:
            continue
        pays = tuple((u, x) for u, x in rec.payments if u <= a)
        kept.append(rec if len(pays) == rec.n_payments else replace(rec, payments=pays))
    return Portfolio(tuple(kept), a, p.origin_date)


def counting_path(p: Portfolio, grid: Sequence[float]) -> np.ndarray:
    """M(t) = #{i : Z_i <= t} at every grid point."""
    grid = np.asarray(grid, dtype=float)
    if grid.size and np.any(np.diff(grid) < 0):
        raise DomainError("grid must be nondecreasing")
    if grid.size and (grid[0] < 0 or grid[-1] > p.horizon_a):
        raise DomainError(f"grid must lie within [0, {p.horizon_a}]")
    return np.searchsorted(p.reporting_times, grid, side="right").astype(int)


# CSV -----------------------------------------------------------------------

def _parse_time(text: str, origin: dt.datetime, line: int, column: str) -> float:
    try:
        value = dt.datetime.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"cannot parse {column} {text!r}", line) from None
    if value.tzinfo is not None:
        value = value.replace(tzinfo=None)
    return (value - origin).total_seconds() / _SECONDS_PER_DAY


def _format_time(t: float, origin: dt.datetime) -> str:
    whole = round(t)
    if abs(t - whole) < 1e-12:
        return (origin + dt.timedelta(days=whole)).date().isoformat()
    return (origin + dt.timedelta(days=t)).isoformat(timespec="microseconds")


def load_csv(
    path: str | Path,
    origin_date: dt.date,
    horizon_a: float | None = None,
) -> Portfolio:
    """Read one-row-per-payment CSV into a :class:`Portfolio`.

    Rows sharing a ``claim_id`` are merged. A claim without payments is a
    single row with empty payment fields. ``horizon_a`` defaults to the
    latest date appearing in the file; times exceeding it by less than the
    microsecond resolution of written timestamps are set to it.
    """
    origin = dt.datetime.combine(origin_date, dt.time())
    claims: dict[str, dict] = {}
    latest = -math.inf
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("missing header", 1)
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"missing columns {missing}", 1)
        for row in reader:
            line = reader.line_num
            if None in row or any(row[c] is None for c in CSV_COLUMNS):
                raise ParseError("wrong number of fields", line)
            cid = row["claim_id"].strip()
            if not cid:
                raise ParseError("empty claim_id", line)
            t_occ = _parse_time(row["occurrence_date"], origin, line, "occurrence_date")
            t_rep = _parse_time(row["reporting_date"], origin, line, "reporting_date")
            latest = max(latest, t_rep)
            entry = claims.setdefault(
                cid,
                {"type": row["claim_type"].strip(), "T": t_occ, "Z": t_rep, "pay": []},
            )
            if (entry["type"], entry["T"], entry["Z"]) != (row["claim_type"].strip(), t_occ, t_rep):
                raise ValidationError(f"inconsistent claim fields on line {line}", cid)
            pdate, pamount = row["payment_date"].strip(), row["payment_amount"].strip()
            if not pdate and not pamount:
                continue
            if not pdate or not pamount:
                raise ParseError("payment_date and payment_amount must both be set", line)
            u = _parse_time(pdate, origin, line, "payment_date")
            try:
                x = float(pamount)
            except ValueError:
                raise ParseError(f"cannot parse payment_amount {pamount!r}", line) from None
            if not x > 0:
                raise ValidationError(f"non-positive payment amount {pamount} on line {line}", cid)
            latest = max(latest, u)
            entry["pay"].append((u, x))

    if horizon_a is None:
        horizon_a = latest if claims else 0.0
    snap = lambda t: horizon_a if horizon_a < t <= horizon_a + _RESOLUTION else t
    records = []
    for cid, e in claims.items():
        pays = sorted((snap(u), x) for u, x in e["pay"])
        z = snap(e["Z"])
        t = min(e["T"], z) if z != e["Z"] else e["T"]
        records.append(ClaimRecord(cid, e["type"], t, z, tuple(pays)))
    return Portfolio(tuple(records), horizon_a, origin_date)


def _rows(p: Portfolio) -> Iterable[list[str]]:
    origin = dt.datetime.combine(p.origin_date, dt.time())
    for rec in p.records:
        head = [
            rec.claim_id,
            rec.claim_type,
            _format_time(rec.occurrence_time, origin),
            _format_time(rec.reporting_time, origin),
        ]
        if not rec.payments:
            yield head + ["", ""]
        for u, x in rec.payments:
            yield head + [_format_time(u, origin), repr(x)]


def write_csv(p: Portfolio, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(_rows(p))
