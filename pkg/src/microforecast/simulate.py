"""Thinning samplers for Poisson processes and for the full marked claim process.

All sampling is vectorised over many independent processes at once: every
process gets a piecewise-constant majorant over up to 32 equal cells, the
proposal counts per cell are Poisson, and a proposal at t in a cell with bound
B is kept when U * B < lambda(t). Any proposal with lambda(t) > B aborts with
:class:`MajorantViolation`.

Random numbers come from counter-based Philox generators keyed by
(master_seed, stream_id, purpose, ...), so a replicate's draws do not depend
on which thread runs it or in which order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .claims_data import Portfolio
from .cond_dist import CondDistModel, sample as sample_amounts
from .errors import DomainError, InputError, MajorantViolation
from .intensity import IntensityModel, MarkIntensityModel

PURPOSE_REPORTING = 1
PURPOSE_EXISTING_PAYMENTS = 2
PURPOSE_NEW_PAYMENTS = 3
PURPOSE_AMOUNTS = 4
PURPOSE_DELAYS = 5

MAX_CELLS = 32
GRID_PER_CELL = 64
_ROUNDING_SLACK = 1.0 + 1e-12
_UINT64 = 2 ** 64


@dataclass(frozen=True)
class RngStream:
    """A family of independent generators derived from one master seed."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < _UINT64):
            raise InputError("master seed must be an unsigned 64-bit integer")
        if int(self.stream_id) < 0:
            raise InputError("stream id must be >= 0")

    def generator(self, *keys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.master_seed), spawn_key=(int(self.stream_id),) + tuple(int(k) for k in keys)
        )
        return np.random.Generator(np.random.Philox(ss))


RngLike = Union[RngStream, np.random.Generator]


def _generator(rng: RngLike, *keys: int) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng.generator(*keys)


@dataclass(frozen=True)
class SimulatedPath:
    arrivals: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        a = np.asarray(self.arrivals, dtype=float)
        if a.size and (a[0] <= self.lo or a[-1] > self.hi or np.any(np.diff(a) <= 0)):
            raise DomainError("arrivals must be strictly increasing within (lo, hi]")
        object.__setattr__(self, "arrivals", a)

    def __len__(self):
        return self.arrivals.size

    def count(self, lo: float, hi: float) -> int:
        """Number of arrivals in (lo, hi]."""
        a = self.arrivals
        return int(np.searchsorted(a, hi, side="right") - np.searchsorted(a, lo, side="right"))


# ---------------------------------------------------------------------------
# core thinning

def _n_cells(spec) -> int:
    return 1 if spec.name in ("constant", "constant_mark") else MAX_CELLS


def _thin(rate, lo, hi, bounds, gen, sort=True):
    """Thin P independent processes.

    ``lo``, ``hi`` have shape (P,); ``bounds`` has shape (P, C) and holds the
    majorant on each of C equal cells of (lo_p, hi_p]. ``rate(t, owner)`` gives
    the intensity of process ``owner`` at ``t``. Returns (owner, t) sorted by
    owner, then time.
    """
    P, C = bounds.shape
    width = (hi - lo) / C
    mean = bounds * width[:, None]
    counts = gen.poisson(mean)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    flat = np.repeat(np.arange(P * C), counts.ravel())
    owner, cell = np.divmod(flat, C)
    left = lo[owner] + cell * width[owner]
    t = left + gen.random(total) * width[owner]
    # (lo, hi]: a proposal exactly at lo has probability zero; map it to hi
    t = np.where(t <= lo[owner], hi[owner], np.minimum(t, hi[owner]))
    u = gen.random(total)
    lam = np.asarray(rate(t, owner), dtype=float)
    B = bounds[owner, cell]
    over = lam > B
    if np.any(over):
        k = int(np.flatnonzero(over)[0])
        raise MajorantViolation(
            f"intensity {lam[k]:.17g} exceeds its bound {B[k]:.17g} at t={t[k]!r}"
        )
    keep = u * B < lam
    owner, t = owner[keep], t[keep]
    if not sort:
        return owner, t
    order = np.lexsort((t, owner))
    return owner[order], t[order]


def _invert(model: MarkIntensityModel, z, lo, hi, gen, sort=True):
    """Exact sampling through the inverse cumulative intensity (for unbounded lambda)."""
    L0 = np.asarray(model.cumulative(lo, z), dtype=float)
    L1 = np.asarray(model.cumulative(hi, z), dtype=float)
    counts = gen.poisson(L1 - L0)
    owner = np.repeat(np.arange(z.size), counts)
    u = L0[owner] + gen.random(owner.size) * (L1 - L0)[owner]
    s = model.spec.inverse_cumulative(u, z[owner], np.asarray(model.params))
    t = z[owner] + s
    t = np.where(t <= lo[owner], hi[owner], np.minimum(t, hi[owner]))
    if not sort:
        return owner, t
    order = np.lexsort((t, owner))
    return owner[order], t[order]


def _cell_edges(lo, hi, C):
    frac = np.linspace(0.0, 1.0, C + 1)
    return lo[:, None] + (hi - lo)[:, None] * frac[None, :]


def _reporting_bounds(model: IntensityModel, lo, hi):
    C = _n_cells(model.spec)
    edges = _cell_edges(lo, hi, C)
    if model.spec.monotone:
        vals = np.asarray(model.eval(np.maximum(edges, model.t_floor)), dtype=float)
        b = np.maximum(vals[:, :-1], vals[:, 1:]) * _ROUNDING_SLACK
    else:
        b = np.array(
            [[model.upper_bound(e[k], e[k + 1], GRID_PER_CELL) for k in range(C)] for e in edges]
        )
    if not np.all(np.isfinite(b)):
        raise DomainError(f"{model.family}: intensity is unbounded on the window")
    return b


def _mark_bounds(model: MarkIntensityModel, lo, hi, z):
    C = _n_cells(model.spec)
    edges = _cell_edges(lo, hi, C)
    if model.spec.monotone:
        zz = np.broadcast_to(z[:, None], (z.size, C))
        return model.cell_bounds(edges[:, :-1], edges[:, 1:], zz) * _ROUNDING_SLACK
    return np.array(
        [
            [model.upper_bound(e[k], e[k + 1], zi, GRID_PER_CELL) for k in range(C)]
            for e, zi in zip(edges, z)
        ]
    )


def _check_window(window):
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise DomainError(f"window must satisfy lo < hi, got ({lo}, {hi}]")
    return lo, hi


def thin_reporting(model: IntensityModel, lo, hi, n_paths: int, gen: np.random.Generator,
                   sort: bool = True):
    """(path index, times) for ``n_paths`` independent paths on (lo, hi]."""
    lo_v = np.full(n_paths, max(lo, model.t_floor))
    hi_v = np.full(n_paths, hi)
    b = _reporting_bounds(model, lo_v[:1], hi_v[:1])
    bounds = np.broadcast_to(b, (n_paths, b.shape[1]))
    return _thin(lambda t, owner: model.eval(t), lo_v, hi_v, bounds, gen, sort)


def thin_marks(model: MarkIntensityModel, z, lo, hi, gen: np.random.Generator, sort: bool = True,
               repeat: int = 1):
    """Payment processes of claims reported at ``z`` on (max(lo, z), hi].

    With ``repeat`` = R the claims are simulated R times independently
    (process index r * len(z) + i); their majorants are computed once.
    Intensities unbounded at the reporting time (Weibull shape < 1) are
    sampled by inverting the cumulative intensity instead of thinning.
    Returns (process index, times), sorted by process then time.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    lo_v = np.maximum(np.broadcast_to(np.asarray(lo, dtype=float), z.shape), z)
    hi_v = np.broadcast_to(np.asarray(hi, dtype=float), z.shape).astype(float)
    active = np.flatnonzero(lo_v < hi_v)
    if active.size == 0 or repeat < 1:
        return np.zeros(0, dtype=int), np.zeros(0)
    za, la, ha = z[active], lo_v[active], hi_v[active]
    n = active.size
    if model.spec.needs_inversion(model.params):
        if repeat > 1:
            za, la, ha = np.tile(za, repeat), np.tile(la, repeat), np.tile(ha, repeat)
        owner, t = _invert(model, za, la, ha, gen, sort)
        rep, i = np.divmod(owner, n)
        return rep * z.size + active[i], t
    bounds = _mark_bounds(model, la, ha, za)
    if repeat > 1:
        za, la, ha = np.tile(za, repeat), np.tile(la, repeat), np.tile(ha, repeat)
        bounds = np.tile(bounds, (repeat, 1))
    owner, t = _thin(lambda t, o: model.eval(t, za[o]), la, ha, bounds, gen, sort)
    rep, i = np.divmod(owner, n)
    return rep * z.size + active[i], t


# ---------------------------------------------------------------------------
# public samplers

def sample_nhpp(
    intensity: Union[IntensityModel, MarkIntensityModel],
    window,
    rng: RngLike,
    z: Optional[float] = None,
) -> SimulatedPath:
    """One path of the process with the given intensity on (lo, hi].

    For a mark intensity pass the reporting time ``z`` of the claim.
    """
    lo, hi = _check_window(window)
    gen = _generator(rng, 0)
    if isinstance(intensity, MarkIntensityModel):
        if z is None:
            raise InputError("a mark intensity needs the reporting time z")
        _, t = thin_marks(intensity, [z], lo, hi, gen)
    else:
        _, t = thin_reporting(intensity, lo, hi, 1, gen)
    return SimulatedPath(t, lo, hi)


def sample_nhpp_batch(
    intensity: Union[IntensityModel, MarkIntensityModel],
    window,
    rng: RngLike,
    n_paths: int,
    z: Optional[float] = None,
) -> list[SimulatedPath]:
    """``n_paths`` independent paths, drawn in one vectorised pass."""
    lo, hi = _check_window(window)
    gen = _generator(rng, 0)
    if isinstance(intensity, MarkIntensityModel):
        if z is None:
            raise InputError("a mark intensity needs the reporting time z")
        owner, t = thin_marks(intensity, np.full(n_paths, float(z)), lo, hi, gen)
    else:
        owner, t = thin_reporting(intensity, lo, hi, n_paths, gen)
    splits = np.searchsorted(owner, np.arange(1, n_paths))
    return [SimulatedPath(a, lo, hi) for a in np.split(t, splits)]


def interval_counts(intensity, window, rng: RngLike, n_paths: int, edges, z=None) -> np.ndarray:
    """Counts of arrivals per bin (edges[k], edges[k+1]] for each path, shape (n_paths, K)."""
    lo, hi = _check_window(window)
    gen = _generator(rng, 0)
    if isinstance(intensity, MarkIntensityModel):
        owner, t = thin_marks(intensity, np.full(n_paths, float(z)), lo, hi, gen, sort=False)
    else:
        owner, t = thin_reporting(intensity, lo, hi, n_paths, gen, sort=False)
    edges = np.asarray(edges, dtype=float)
    k = np.searchsorted(edges, t, side="left") - 1
    ok = (k >= 0) & (k < edges.size - 1)
    out = np.zeros((n_paths, edges.size - 1), dtype=int)
    np.add.at(out, (owner[ok], k[ok]), 1)
    return out


@dataclass(frozen=True)
class MarkedSample:
    """Future reports and payments on (a, b] for one replicate.

    ``existing_owner`` indexes ``Portfolio.records``; ``new_owner`` indexes
    ``new_reporting_times``.
    """

    new_reporting_times: np.ndarray
    existing_owner: np.ndarray
    existing_times: np.ndarray
    existing_amounts: np.ndarray
    new_owner: np.ndarray
    new_times: np.ndarray
    new_amounts: np.ndarray

    @property
    def n_payments(self) -> int:
        return int(self.existing_times.size + self.new_times.size)

    @property
    def total(self) -> float:
        return float(np.sum(self.existing_amounts) + np.sum(self.new_amounts))


@dataclass(frozen=True)
class MarkedBlock:
    """Several replicates simulated in one vectorised pass.

    Every event carries the index of its replicate (``*_rep``). New claims are
    numbered across the block; ``new_owner`` indexes ``new_reporting_times``.
    """

    n_replicates: int
    new_rep: np.ndarray
    new_reporting_times: np.ndarray
    existing_rep: np.ndarray
    existing_owner: np.ndarray
    existing_times: np.ndarray
    existing_amounts: np.ndarray
    new_owner: np.ndarray
    new_times: np.ndarray
    new_amounts: np.ndarray

    def totals(self) -> np.ndarray:
        R = self.n_replicates
        out = np.bincount(self.existing_rep, weights=self.existing_amounts, minlength=R)
        out = out + np.bincount(self.new_rep[self.new_owner], weights=self.new_amounts, minlength=R)
        return out

    def payment_counts(self) -> np.ndarray:
        R = self.n_replicates
        return (np.bincount(self.existing_rep, minlength=R)
                + np.bincount(self.new_rep[self.new_owner], minlength=R))

    def replicate(self, r: int) -> MarkedSample:
        sel_new = np.flatnonzero(self.new_rep == r)
        renum = np.full(self.new_rep.size, -1)
        renum[sel_new] = np.arange(sel_new.size)
        e = self.existing_rep == r
        n = self.new_rep[self.new_owner] == r
        return MarkedSample(
            new_reporting_times=self.new_reporting_times[sel_new],
            existing_owner=self.existing_owner[e],
            existing_times=self.existing_times[e],
            existing_amounts=self.existing_amounts[e],
            new_owner=renum[self.new_owner[n]],
            new_times=self.new_times[n],
            new_amounts=self.new_amounts[n],
        )


def sample_marked_block(
    reporting: IntensityModel,
    mark: MarkIntensityModel,
    amounts: CondDistModel,
    window,
    existing: Portfolio,
    rng: RngStream,
    n_replicates: int,
) -> MarkedBlock:
    """``n_replicates`` independent draws of future reports, payments and amounts.

    One generator per purpose is derived from ``rng``: reporting times,
    payments of existing claims, payments of new claims, amounts.
    """
    a, b = _check_window(window)
    if not isinstance(rng, RngStream):
        raise InputError("marked sampling needs an RngStream (one generator per purpose)")
    R = int(n_replicates)
    if R < 1:
        raise InputError("n_replicates must be >= 1")
    new_rep, z_new = thin_reporting(reporting, a, b, R, rng.generator(PURPOSE_REPORTING))
    z_old = existing.reporting_times
    M = z_old.size
    k, e_t = thin_marks(mark, z_old, a, b, rng.generator(PURPOSE_EXISTING_PAYMENTS), repeat=R)
    e_rep, e_owner = np.divmod(k, M) if M else (k, k)
    n_owner, n_t = thin_marks(mark, z_new, a, b, rng.generator(PURPOSE_NEW_PAYMENTS))
    zz = np.concatenate([z_old[e_owner], z_new[n_owner]])
    if zz.size:
        x = np.asarray(sample_amounts(amounts, zz, rng.generator(PURPOSE_AMOUNTS)), dtype=float)
        x = x.reshape(-1)
    else:
        x = np.zeros(0)
    return MarkedBlock(
        n_replicates=R,
        new_rep=new_rep,
        new_reporting_times=z_new,
        existing_rep=e_rep,
        existing_owner=e_owner,
        existing_times=e_t,
        existing_amounts=x[: e_t.size],
        new_owner=n_owner,
        new_times=n_t,
        new_amounts=x[e_t.size:],
    )


def sample_marked(
    reporting: IntensityModel,
    mark: MarkIntensityModel,
    amounts: CondDistModel,
    window,
    existing: Portfolio,
    rng: RngStream,
) -> MarkedSample:
    """Reports on (a, b], future payments of existing and new claims, and their amounts.

    New claims are paid with the mark intensity evaluated at their simulated
    reporting time; all amounts are drawn at the owning claim's reporting time.
    """
    return sample_marked_block(reporting, mark, amounts, window, existing, rng, 1).replicate(0)
