import datetime as dt
import math

import numpy as np
import pytest

from microforecast import cond_dist as cd
from microforecast.claims_data import ClaimRecord, Portfolio
from microforecast.diagnostics import (
    calendar_quarters,
    independence_grid,
    intensity_fit_series,
    quarterly_delay_backtest,
)
from microforecast.errors import InputError
from microforecast.intensity import IntensityModel, MarkIntensityModel
from microforecast.poisson_fit import fit_reporting
from microforecast.synth import GroundTruth, generate

from conftest import make_portfolio

AMOUNTS = cd.constant_model("lognormal", 3.0, 1.0)


def _gt(seed, delay=None, a=730.0, theta=0.02):
    return GroundTruth(
        reporting=IntensityModel("constant", (1.0,)),
        delay=delay or cd.CondDistModel("lognormal", 0, True, (2.0, -0.005), (0.7, 0.0)),
        mark=MarkIntensityModel("constant_mark", (theta,)),
        amounts=AMOUNTS,
        horizon_a=a,
        seed=seed,
        origin_date=dt.date(2015, 2, 10),
    )


def test_constant_fit_matches_endpoint():
    p = generate(_gt(0))
    r = fit_reporting(p, "constant")
    df = intensity_fit_series(p, r.model, [0.0, 100.0, p.horizon_a, p.horizon_a + 50])
    assert df["fitted_Psi"].iloc[2] == pytest.approx(df["observed_M"].iloc[2], rel=1e-12)
    assert np.isnan(df["observed_M"].iloc[3])
    assert df["extrapolated"].tolist() == [False, False, False, True]


def test_empty_grid_gives_empty_table():
    p = make_portfolio([1.0], 2.0)
    df = intensity_fit_series(p, IntensityModel("constant", (1.0,)), [])
    assert len(df) == 0
    assert list(df.columns) == ["t", "observed_M", "fitted_Psi", "fitted_psi", "extrapolated"]


def test_fit_series_process_check_reported():
    p = generate(_gt(1))
    r = fit_reporting(p, "exponential")
    grid = np.linspace(0.0, p.horizon_a, 200)
    df = intensity_fit_series(p, r.model, grid)
    sup = np.max(np.abs(df["observed_M"] - df["fitted_Psi"])) / math.sqrt(df["fitted_Psi"].iloc[-1])
    print(f"sup |M - Psi| / sqrt(Psi(a)) = {sup:.3f}")
    assert math.isfinite(sup)


def test_calendar_quarters_cover_horizon():
    qs = calendar_quarters(dt.date(2015, 2, 10), 400.0)
    assert qs[0][0] == "2015-Q1"
    assert qs[0][1] < 0 <= qs[0][2]
    assert qs[-1][1] <= 400.0 < qs[-1][2]
    for (_, _, hi), (_, lo, _) in zip(qs[:-1], qs[1:]):
        assert hi == lo


def test_backtest_unit_delay():
    p = generate(_gt(2))
    delay = cd.constant_model("lognormal", 0.0, 1e-9)
    df = quarterly_delay_backtest(p, delay)
    filled = df[df["n_claims"] > 0]
    np.testing.assert_allclose(filled["predicted_mean_delay"], 1.0, rtol=1e-9)


def test_backtest_with_true_model():
    delay = cd.CondDistModel("lognormal", 0, True, (2.0, -0.005), (0.7, 0.0))
    ok = total = 0
    for seed in range(10):
        df = quarterly_delay_backtest(generate(_gt(seed, delay)), delay)
        df = df[df["n_claims"] >= 2]
        se = df["observed_sd"] / np.sqrt(df["n_claims"])
        ok += int((np.abs(df["observed_mean_delay"] - df["predicted_mean_delay"]) <= 4 * se).sum())
        total += len(df)
    assert ok >= 0.95 * total


def test_backtest_single_claim_quarter_and_explicit_bins():
    p = make_portfolio([5.0, 200.0, 210.0], 300.0)
    df = quarterly_delay_backtest(p, cd.constant_model("lognormal", 0.0, 0.5), [(0, 100), (100, 250), (250, 300)])
    assert df["n_claims"].tolist() == [1, 2, 0]
    assert np.isnan(df["observed_sd"].iloc[0])
    assert np.isnan(df["observed_mean_delay"].iloc[2])


def test_independent_data_rarely_flagged():
    clean = 0
    runs = 100
    for seed in range(runs):
        p = generate(_gt(seed, a=365.0, theta=0.02))
        grid = independence_grid(p, _gt(0).delay, AMOUNTS, max_payments=3)
        c = grid.correlations
        clean += not bool(c["flagged"].any())
    assert clean >= 0.95 * runs


def test_copied_payment_is_flagged():
    recs = []
    g = np.random.default_rng(0)
    for i in range(60):
        z = float(i + 1)
        x1 = float(g.lognormal(3.0, 1.0))
        recs.append(ClaimRecord(f"c{i}", "A", z - 1.0, z, ((z + 1, x1), (z + 2, x1))))
    p = Portfolio(tuple(recs), 100.0)
    grid = independence_grid(p, cd.constant_model("lognormal", 0.0, 0.5), AMOUNTS, max_payments=2)
    row = grid.correlations.query("var1 == 'X1' and var2 == 'X2'").iloc[0]
    assert row["corr"] == pytest.approx(1.0)
    assert row["flagged"]


def test_pairs_need_both_payments():
    recs = [
        ClaimRecord(f"c{i}", "A", 0.0, 1.0 + i, tuple((2.0 + i + k, 1.0 + k) for k in range(i % 3)))
        for i in range(30)
    ]
    p = Portfolio(tuple(recs), 100.0)
    grid = independence_grid(p, cd.constant_model("lognormal", 0.0, 0.5), AMOUNTS, max_payments=2)
    row = grid.correlations.query("var1 == 'X1' and var2 == 'X2'").iloc[0]
    assert row["n"] == int(np.sum(p.payment_counts >= 2))
    w_row = grid.correlations.query("var1 == 'W' and var2 == 'X1'").iloc[0]
    assert w_row["n"] == int(np.sum(p.payment_counts >= 1))


def test_few_pairs_are_insufficient():
    p = make_portfolio([1.0, 2.0, 3.0], 10.0, [((4.0, 1.0), (5.0, 2.0)), ((5.0, 3.0),), ()])
    with pytest.warns(RuntimeWarning, match="clamped"):  # zero delays sit at the CDF boundary
        grid = independence_grid(p, cd.constant_model("lognormal", 0.0, 0.5), AMOUNTS)
    assert grid.correlations["insufficient"].all()
    with pytest.raises(InputError):
        independence_grid(p, cd.constant_model("lognormal", 0.0, 0.5), AMOUNTS, max_payments=1)
