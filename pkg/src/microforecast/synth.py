"""Synthetic portfolios drawn from fully specified models, for validation.

The history on (0, a] and the continuation on (a, b] use separate random
streams, so ``generate(gt)`` is exactly the portfolio that
``generate_holdout(gt, b)`` returns for any b.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .claims_data import ClaimRecord, Portfolio
from .cond_dist import CondDistModel, sample as cond_sample
from .errors import DomainError, InputError
from .intensity import IntensityModel, MarkIntensityModel
from .simulate import (
    PURPOSE_AMOUNTS,
    PURPOSE_DELAYS,
    PURPOSE_EXISTING_PAYMENTS,
    PURPOSE_REPORTING,
    RngStream,
    sample_marked_block,
    thin_marks,
    thin_reporting,
)

_HISTORY_STREAM = 0
_HOLDOUT_STREAM = 1
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class GroundTruth:
    reporting: IntensityModel
    delay: CondDistModel
    mark: MarkIntensityModel
    amounts: CondDistModel
    horizon_a: float
    seed: int
    origin_date: dt.date = field(default=dt.date(2000, 1, 1))
    claim_type: str = "A"

    def __post_init__(self):
        if not self.horizon_a > 0:
            raise InputError("horizon_a must be > 0")
        RngStream(self.seed)  # validates the seed range

    def to_dict(self) -> dict:
        return {
            "reporting": self.reporting.to_dict(),
            "delay": self.delay.to_dict(),
            "mark": self.mark.to_dict(),
            "amounts": self.amounts.to_dict(),
            "horizon_a": self.horizon_a,
            "seed": self.seed,
            "origin_date": self.origin_date.isoformat(),
            "claim_type": self.claim_type,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        allowed = {"reporting", "delay", "mark", "amounts", "horizon_a", "seed",
                   "origin_date", "claim_type"}
        extra = set(d) - allowed
        if extra:
            raise InputError(f"unknown keys in ground truth: {sorted(extra)}")
        missing = {"reporting", "delay", "mark", "amounts", "horizon_a", "seed"} - set(d)
        if missing:
            raise InputError(f"ground truth lacks {sorted(missing)}")
        origin = d.get("origin_date")
        return cls(
            reporting=IntensityModel.from_dict(d["reporting"]),
            delay=CondDistModel.from_dict(d["delay"]),
            mark=MarkIntensityModel.from_dict(d["mark"]),
            amounts=CondDistModel.from_dict(d["amounts"]),
            horizon_a=float(d["horizon_a"]),
            seed=int(d["seed"]),
            origin_date=dt.date.fromisoformat(origin) if origin else dt.date(2000, 1, 1),
            claim_type=str(d.get("claim_type", "A")),
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        return cls.from_dict(json.loads(text))


def _amounts(model, z, gen):
    if z.size == 0:
        return np.zeros(0)
    x = np.asarray(cond_sample(model, z, gen), dtype=float).reshape(-1)
    # guard against underflow to exactly zero for extreme parameters
    return np.maximum(x, _TINY)


def generate(gt: GroundTruth) -> Portfolio:
    """Claims reported on (0, a] with their payments up to a."""
    a = gt.horizon_a
    rng = RngStream(gt.seed, _HISTORY_STREAM)
    _, z = thin_reporting(gt.reporting, 0.0, a, 1, rng.generator(PURPOSE_REPORTING))
    w = (
        np.asarray(cond_sample(gt.delay, z, rng.generator(PURPOSE_DELAYS)), dtype=float).reshape(-1)
        if z.size
        else np.zeros(0)
    )
    owner, u = thin_marks(gt.mark, z, 0.0, a, rng.generator(PURPOSE_EXISTING_PAYMENTS))
    x = _amounts(gt.amounts, z[owner], rng.generator(PURPOSE_AMOUNTS))
    splits = np.searchsorted(owner, np.arange(1, z.size))
    pay_u = np.split(u, splits)
    pay_x = np.split(x, splits)
    records = tuple(
        ClaimRecord(
            f"C{i:07d}",
            gt.claim_type,
            float(z[i] - w[i]),
            float(z[i]),
            tuple(zip(pay_u[i].tolist(), pay_x[i].tolist())),
        )
        for i in range(z.size)
    )
    return Portfolio(records, a, gt.origin_date)


def generate_holdout(gt: GroundTruth, b: float) -> tuple[Portfolio, float]:
    """The portfolio at a and the realised total paid on (a, b].

    The total includes payments of claims reported inside (a, b].
    """
    a = gt.horizon_a
    if b < a:
        raise DomainError(f"holdout end b={b} precedes the horizon {a}")
    p = generate(gt)
    if b == a:
        return p, 0.0
    blk = sample_marked_block(
        gt.reporting, gt.mark, gt.amounts, (a, b), p, RngStream(gt.seed, _HOLDOUT_STREAM), 1
    )
    return p, float(blk.totals()[0])
