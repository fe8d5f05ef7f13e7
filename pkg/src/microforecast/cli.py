"""Command-line interface: fit, predict, backpredict, simulate, diagnose, synth.

Exit codes: 0 success, 1 input or configuration error, 2 partial convergence
(outputs are still written), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from . import cond_dist, diagnostics, forecast, poisson_fit, synth
from .claims_data import ClaimRecord, Portfolio, load_csv, write_csv
from .cond_dist import CondDistModel
from .errors import InputError, MicroforecastError, NumericalError, SimulationError
from .intensity import MARK_FAMILIES, REPORTING_FAMILIES, IntensityModel, MarkIntensityModel
from .simulate import PURPOSE_DELAYS, RngStream, sample_marked_block

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_PARTIAL, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("microforecast")

_CONFIG_KEYS = {
    "schema_version", "origin_date", "horizon_a", "claim_type", "prediction_end",
    "reporting", "delay", "mark", "amounts",
}
_POISSON_KEYS = {"family", "init", "period_grid"}
_COND_KEYS = {"family", "L", "trend", "free_xi"}


# ---------------------------------------------------------------------------
# config and bundle

def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise InputError(f"{where}: expected an object")
    extra = set(d) - allowed
    if extra:
        raise InputError(f"{where}: unknown key(s) {sorted(extra)}")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def load_config(path) -> dict:
    cfg = _read_json(path)
    _check_keys(cfg, _CONFIG_KEYS, "config")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"config: schema_version must be {SCHEMA_VERSION}")
    if "reporting" not in cfg or cfg["reporting"] is None:
        raise InputError("config: 'reporting' is required")
    _check_keys(cfg["reporting"], _POISSON_KEYS, "config.reporting")
    if cfg["reporting"].get("family") not in REPORTING_FAMILIES:
        raise InputError(f"config.reporting.family: unknown family {cfg['reporting'].get('family')!r}")
    if cfg.get("mark") is not None:
        _check_keys(cfg["mark"], _POISSON_KEYS, "config.mark")
        if cfg["mark"].get("family") not in MARK_FAMILIES:
            raise InputError(f"config.mark.family: unknown family {cfg['mark'].get('family')!r}")
    for key in ("delay", "amounts"):
        if cfg.get(key) is not None:
            _check_keys(cfg[key], _COND_KEYS, f"config.{key}")
            if cfg[key].get("family") not in cond_dist.FAMILIES:
                raise InputError(f"config.{key}.family: unknown family {cfg[key].get('family')!r}")
    return cfg


def _origin(cfg_or_bundle) -> dt.date:
    text = cfg_or_bundle.get("origin_date") or "2000-01-01"
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise InputError(f"origin_date: cannot parse {text!r}") from None


def _load_portfolio(data_path, origin, horizon_a, claim_type) -> Portfolio:
    p = load_csv(data_path, origin, horizon_a)
    if claim_type is not None:
        p = p.with_type(claim_type)
    return p


def _fit_entry(model_dict, fit: poisson_fit.FitResult) -> dict:
    return {"model": model_dict, "fit": fit.to_dict()}


def load_bundle(path) -> dict:
    b = _read_json(path)
    _check_keys(b, {"schema_version", "origin_date", "horizon_a", "claim_type", "components",
                    "converged"}, "bundle")
    if b.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"bundle: schema_version must be {SCHEMA_VERSION}")
    return b


def bundle_models(b: dict) -> dict:
    comps = b.get("components", {})
    out = {}
    loaders = {
        "reporting": IntensityModel.from_dict,
        "mark": MarkIntensityModel.from_dict,
        "delay": CondDistModel.from_dict,
        "amounts": CondDistModel.from_dict,
    }
    for key, load in loaders.items():
        entry = comps.get(key)
        out[key] = None if entry is None else load(entry["model"])
    return out


def _require(models, *keys):
    missing = [k for k in keys if models.get(k) is None]
    if missing:
        raise InputError(f"bundle lacks component(s) {missing}")


# ---------------------------------------------------------------------------
# commands

def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    origin = _origin(cfg)
    p = _load_portfolio(args.data, origin, cfg.get("horizon_a"), cfg.get("claim_type"))
    log.info("loaded %d claims, horizon %.6g days", len(p), p.horizon_a)
    comps = {}
    converged = True

    rc = cfg["reporting"]
    fit = poisson_fit.fit_reporting(p, rc["family"], rc.get("init"), period_grid=rc.get("period_grid"))
    comps["reporting"] = _fit_entry(fit.model.to_dict(), fit)
    converged &= fit.converged
    log.info("reporting: %s converged=%s", fit.estimate, fit.converged)

    if cfg.get("mark") is not None:
        mc = cfg["mark"]
        fit = poisson_fit.fit_marks(p, mc["family"], mc.get("init"), period_grid=mc.get("period_grid"))
        comps["mark"] = _fit_entry(fit.model.to_dict(), fit)
        converged &= fit.converged
        log.info("mark: %s converged=%s", fit.estimate, fit.converged)
    else:
        comps["mark"] = None

    window = None
    if cfg.get("prediction_end") is not None:
        window = (p.horizon_a, float(cfg["prediction_end"]))
    for key in ("delay", "amounts"):
        c = cfg.get(key)
        if c is None:
            comps[key] = None
            continue
        if key == "delay":
            obs = np.column_stack([p.reporting_times, p.delays])
        else:
            obs = np.column_stack([p.reporting_times[p.payment_owner], p.payment_amounts])
        if obs.size:
            bad = ~(obs[:, 1] > 0)
            if np.any(bad):
                warnings.warn(f"{key}: {int(bad.sum())} non-positive values excluded from the fit")
                obs = obs[~bad]
        fit = cond_dist.fit(obs, c["family"], int(c.get("L", 0)), bool(c.get("trend", False)),
                            free_xi=bool(c.get("free_xi", False)), constraint_window=window)
        comps[key] = _fit_entry(fit.model.to_dict(), fit)
        converged &= fit.converged
        log.info("%s: converged=%s", key, fit.converged)

    bundle = {
        "schema_version": SCHEMA_VERSION,
        "origin_date": origin.isoformat(),
        "horizon_a": p.horizon_a,
        "claim_type": cfg.get("claim_type"),
        "components": comps,
        "converged": bool(converged),
    }
    Path(args.out).write_text(json.dumps(bundle, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK if converged else EXIT_PARTIAL


def _bundle_portfolio(b, data_path) -> Portfolio:
    return _load_portfolio(data_path, _origin(b), b["horizon_a"], b.get("claim_type"))


def cmd_predict(args) -> int:
    b = load_bundle(args.bundle)
    models = bundle_models(b)
    _require(models, "reporting", "mark", "amounts")
    p = _bundle_portfolio(b, args.data)
    if not args.until > p.horizon_a:
        raise InputError(f"--until {args.until} must exceed the horizon {p.horizon_a}")
    dist = forecast.predict_total(
        p, models["reporting"], models["mark"], models["amounts"], args.until,
        S=args.sims, seed=_seed(args), threads=args.threads,
    )
    Path(args.out).write_text(dist.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def _parse_bins(spec: Optional[str], b: dict) -> list[tuple[float, float]]:
    if spec is None or spec == "quarters":
        return [(lo, hi) for _, lo, hi in
                diagnostics.calendar_quarters(_origin(b), float(b["horizon_a"]))]
    try:
        start, stop, width = (float(x) for x in spec.split(":"))
    except ValueError:
        raise InputError(f"--bins must be 'quarters' or START:STOP:WIDTH, got {spec!r}") from None
    if not (width > 0 and stop > start):
        raise InputError("--bins needs STOP > START and WIDTH > 0")
    edges = np.arange(start, stop + 1e-9 * width, width)
    if edges[-1] < stop:
        edges = np.append(edges, stop)
    return list(zip(edges[:-1].tolist(), edges[1:].tolist()))


def cmd_backpredict(args) -> int:
    b = load_bundle(args.bundle)
    models = bundle_models(b)
    _require(models, "reporting", "delay")
    a = float(b["horizon_a"])
    bins = _parse_bins(args.bins, b)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lo = min(x for x, _ in bins)
    hi = max(y for _, y in bins)
    grid = np.arange(lo, hi + 1e-9, args.grid_step)
    oi = forecast.occurrence_intensity(models["reporting"], models["delay"], grid, a)
    forecast.write_intensity_csv(oi, out / "occurrence_intensity.csv")
    counts = forecast.backpredict_counts(models["reporting"], models["delay"], bins, a)
    forecast.write_counts_csv(bins, counts, out / "backpredicted_counts.csv", oi.extrapolated)
    return EXIT_OK


def cmd_simulate(args) -> int:
    b = load_bundle(args.bundle)
    models = bundle_models(b)
    _require(models, "reporting", "mark", "amounts")
    lo, hi = args.window
    origin = _origin(b)
    if args.data is not None:
        existing = _load_portfolio(args.data, origin, lo, b.get("claim_type"))
    else:
        existing = Portfolio((), lo, origin)
    rng = RngStream(_seed(args), 0)
    blk = sample_marked_block(models["reporting"], models["mark"], models["amounts"], (lo, hi),
                              existing, rng, 1)
    z_new = blk.new_reporting_times
    if models["delay"] is not None and z_new.size:
        w = np.asarray(cond_dist.sample(models["delay"], z_new, rng.generator(PURPOSE_DELAYS)),
                       dtype=float).reshape(-1)
    else:
        w = np.zeros(z_new.size)
    records = []
    for i, rec in enumerate(existing.records):
        sel = blk.existing_owner == i
        if np.any(sel):
            pays = tuple(zip(blk.existing_times[sel].tolist(), blk.existing_amounts[sel].tolist()))
            records.append(ClaimRecord(rec.claim_id, rec.claim_type, rec.occurrence_time,
                                       rec.reporting_time, pays))
    ctype = b.get("claim_type") or "A"
    for j, z in enumerate(z_new):
        sel = blk.new_owner == j
        pays = tuple(zip(blk.new_times[sel].tolist(), blk.new_amounts[sel].tolist()))
        records.append(ClaimRecord(f"S{j:07d}", ctype, float(z - w[j]), float(z), pays))
    write_csv(Portfolio(tuple(records), hi, origin), args.out)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    b = load_bundle(args.bundle)
    models = bundle_models(b)
    _require(models, "reporting")
    p = _bundle_portfolio(b, args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = np.arange(0.0, p.horizon_a + args.extend + 1e-9, args.grid_step)
    diagnostics.intensity_fit_series(p, models["reporting"], grid).to_csv(
        out / "intensity_fit.csv", index=False, float_format="%.17g")
    if models["delay"] is not None:
        diagnostics.quarterly_delay_backtest(p, models["delay"]).to_csv(
            out / "delay_backtest.csv", index=False, float_format="%.17g")
    if models["delay"] is not None and models["amounts"] is not None:
        grid_ind = diagnostics.independence_grid(p, models["delay"], models["amounts"], args.max_payments)
        grid_ind.correlations.to_csv(out / "independence_correlations.csv", index=False,
                                     float_format="%.17g")
        grid_ind.samples.to_csv(out / "independence_samples.csv", index=False, float_format="%.17g")
    return EXIT_OK


def cmd_synth(args) -> int:
    d = _read_json(args.spec)
    if args.seed is not None:
        d = dict(d, seed=args.seed)
    gt = synth.GroundTruth.from_dict(d)
    if args.holdout_until is not None:
        p, total = synth.generate_holdout(gt, args.holdout_until)
        if args.holdout_out is None:
            raise InputError("--holdout-until needs --holdout-out")
        Path(args.holdout_out).write_text(
            json.dumps({"window": [gt.horizon_a, args.holdout_until], "total": total}, indent=2) + "\n",
            encoding="utf-8",
        )
    else:
        p = synth.generate(gt)
    write_csv(p, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None,
                        help="master seed (unsigned 64-bit, default 0; synth defaults to the seed in its input)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="microforecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit all model components")
    p.add_argument("config")
    p.add_argument("data")
    p.add_argument("out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="predictive distribution of future payments")
    p.add_argument("bundle")
    p.add_argument("data")
    p.add_argument("out")
    p.add_argument("--until", type=float, required=True, help="end b of the window (a, b], in days")
    p.add_argument("--sims", type=_positive_int, default=forecast.DEFAULT_S)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("backpredict", parents=[common], help="occurrence intensity and counts")
    p.add_argument("bundle")
    p.add_argument("out_dir")
    p.add_argument("--bins", default=None, help="'quarters' (default) or START:STOP:WIDTH in days")
    p.add_argument("--grid-step", type=float, default=7.0)
    p.set_defaults(func=cmd_backpredict)

    p = sub.add_parser("simulate", parents=[common], help="one draw of future claims and payments")
    p.add_argument("bundle")
    p.add_argument("out")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"), required=True)
    p.add_argument("--data", default=None, help="existing claims (CSV) observed up to LO")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", parents=[common], help="diagnostic tables as CSV")
    p.add_argument("bundle")
    p.add_argument("data")
    p.add_argument("out_dir")
    p.add_argument("--grid-step", type=float, default=1.0)
    p.add_argument("--extend", type=float, default=0.0, help="days beyond the horizon")
    p.add_argument("--max-payments", type=int, default=4)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("synth", parents=[common], help="synthetic portfolio from a ground-truth spec")
    p.add_argument("spec")
    p.add_argument("out")
    p.add_argument("--holdout-until", type=float, default=None)
    p.add_argument("--holdout-out", default=None)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    with warnings.catch_warnings():
        if not args.verbose:
            warnings.simplefilter("ignore")
        try:
            return args.func(args)
        except (NumericalError, SimulationError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        except (MicroforecastError, OSError, KeyError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
