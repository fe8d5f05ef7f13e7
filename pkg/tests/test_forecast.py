import math

import numpy as np
import pytest

from microforecast import cond_dist as cd
from microforecast.errors import DomainError, InputError
from microforecast.forecast import (
    PredictiveDistribution,
    backpredict_counts,
    delay_z_max,
    occurrence_intensity,
    predict_total,
    summarize,
    write_counts_csv,
    write_intensity_csv,
)
from microforecast.intensity import IntensityModel, MarkIntensityModel
from microforecast.simulate import PURPOSE_DELAYS, PURPOSE_REPORTING, RngStream, thin_reporting

from conftest import make_portfolio

CONST = IntensityModel("constant", (2.0,))
DELAY = cd.constant_model("lognormal", 2.0, 0.6)


def _dist(values):
    return PredictiveDistribution(np.asarray(values, dtype=float), (0.0, 1.0))


def _order_statistic_percentile(x, q):
    """Linear interpolation between order statistics at rank 1 + (n - 1) q."""
    x = sorted(x)
    h = (len(x) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(x) - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])


def test_summary_small_examples():
    s = summarize(_dist([5, 1, 4, 2, 3]))
    assert s["mean"] == 3.0 and s["median"] == 3.0
    s = summarize(_dist([7.0] * 6))
    assert s["sd"] == 0.0 and s["cv"] == 0.0
    assert s["pct_lo"] == 7.0 and s["pct_hi"] == 7.0


def test_summary_percentile_convention():
    x = np.arange(1.0, 10_001.0)
    s = summarize(_dist(x[::-1]))
    assert s["pct_lo"] == pytest.approx(50.995, rel=1e-14)
    assert s["pct_lo"] == pytest.approx(_order_statistic_percentile(x, 0.005), rel=1e-14)
    assert s["pct_hi"] == pytest.approx(_order_statistic_percentile(x, 0.995), rel=1e-14)


def test_summary_degenerate_cases():
    s = summarize(_dist([4.0]))
    assert s["sd"] is None and s["cv"] is None
    assert summarize(_dist([0.0, 0.0]))["cv"] is None
    with pytest.raises(InputError):
        summarize(_dist([]))


def test_zero_model_gives_zero_totals():
    p = make_portfolio([1.0, 2.0], 10.0, [((3.0, 5.0),), ()])
    d = predict_total(p, IntensityModel("constant", (0.0,)), MarkIntensityModel("constant_mark", (0.0,)),
                      DELAY, 50.0, S=100, seed=1)
    assert d.S == 100
    assert np.all(d.totals == 0.0)


def test_single_replicate_is_point_mass():
    p = make_portfolio([1.0, 2.0], 10.0)
    d = predict_total(p, CONST, MarkIntensityModel("constant_mark", (0.1,)), DELAY, 20.0, S=1, seed=3)
    s = summarize(d)
    assert d.S == 1
    assert s["pct_lo"] == s["pct_hi"] == s["median"] == s["mean"]


def test_constant_configuration_mean():
    rho, theta, c, d, a, b = 0.2, 0.02, 1.0, 0.5, 100.0, 150.0
    zs = np.linspace(1.0, 99.0, 30)
    p = make_portfolio(zs, a)
    dist = predict_total(
        p, IntensityModel("constant", (rho,)), MarkIntensityModel("constant_mark", (theta,)),
        cd.constant_model("lognormal", c, d), b, S=10_000, seed=42,
    )
    n_pay = theta * (b - a) * len(p) + rho * theta * (b - a) ** 2 / 2
    expected = n_pay * math.exp(c + d * d / 2)
    se = np.std(dist.totals, ddof=1) / math.sqrt(dist.S)
    assert abs(np.mean(dist.totals) - expected) <= 2 * se


def test_prediction_independent_of_threads():
    p = make_portfolio(np.linspace(1.0, 90.0, 20), 100.0)
    args = (p, IntensityModel("exponential", (-1.0, 0.005)), MarkIntensityModel("weibull_baseline", (1.2, 0.02, 0.0)),
            DELAY, 200.0)
    one = predict_total(*args, S=333, seed=7, threads=1)
    four = predict_total(*args, S=333, seed=7, threads=4)
    np.testing.assert_array_equal(one.totals, four.totals)
    other = predict_total(*args, S=333, seed=8, threads=1)
    assert not np.array_equal(one.totals, other.totals)


def test_prediction_end_must_exceed_horizon():
    p = make_portfolio([1.0], 10.0)
    with pytest.raises(DomainError):
        predict_total(p, CONST, MarkIntensityModel("constant_mark", (0.1,)), DELAY, 10.0, S=5)


def test_occurrence_constant_interior():
    oi = occurrence_intensity(CONST, DELAY, [100.0, 200.0, 300.0], horizon_a=365.0)
    np.testing.assert_allclose(oi.values, 2.0, rtol=1e-6)
    assert oi.extrapolated


def test_occurrence_with_degenerate_delay_is_shift():
    psi = IntensityModel("exponential", (-1.0, 0.01))
    w0 = 5.0
    delay = cd.constant_model("lognormal", math.log(w0), 1e-6)
    grid = [20.0, 80.0, 150.0]
    oi = occurrence_intensity(psi, delay, grid, horizon_a=200.0)
    np.testing.assert_allclose(oi.values, psi.eval(np.array(grid) + w0), rtol=1e-3)


def test_occurrence_exponential_gamma_closed_form():
    # mu(t) = exp(r1 + r2 t) E[exp(r2 W)] = exp(r1 + r2 t) (1 - r2 d)^(-c)
    r1, r2, c, d = -1.0, 0.01, 2.0, 5.0
    psi = IntensityModel("exponential", (r1, r2))
    delay = cd.constant_model("gamma", c, d)
    grid = np.array([10.0, 100.0, 250.0])
    oi = occurrence_intensity(psi, delay, grid, horizon_a=300.0)
    expected = np.exp(r1 + r2 * grid) * (1 - r2 * d) ** (-c)
    np.testing.assert_allclose(oi.values, expected, rtol=1e-6)


def test_backpredict_constant_bins():
    bins = [(100.0, 130.0), (130.0, 160.0)]
    np.testing.assert_allclose(backpredict_counts(CONST, DELAY, bins, horizon_a=365.0), 60.0, rtol=1e-6)


def test_backpredict_additive():
    psi = IntensityModel("quad_periodic", (0.0, 0.002, -3e-6, 0.3, 0.2, 120.0))
    delay = cd.CondDistModel("gamma", 0, True, (1.5, 0.01), (4.0, 0.0))
    small = backpredict_counts(psi, delay, [(0, 50), (50, 120), (120, 300)], horizon_a=300.0)
    big = backpredict_counts(psi, delay, [(0, 300)], horizon_a=300.0)
    assert small.sum() == pytest.approx(big[0], rel=1e-7)


def test_backpredict_matches_integral_of_mu():
    from scipy.integrate import quad

    psi = IntensityModel("exponential", (0.0, 0.003))
    delay = cd.CondDistModel("weibull", 0, True, (1.3, 0.0), (10.0, 0.05))
    mu = lambda t: occurrence_intensity(psi, delay, [t], horizon_a=365.0).values[0]
    direct, _ = quad(mu, 100.0, 140.0, epsrel=1e-8)
    got = backpredict_counts(psi, delay, [(100.0, 140.0)], horizon_a=365.0)[0]
    assert got == pytest.approx(direct, rel=1e-6)


def test_backpredict_against_simulated_occurrences():
    psi = IntensityModel("exponential", (1.0, 0.002))
    delay = cd.CondDistModel("lognormal", 0, True, (2.5, -0.01), (0.7, 0.0))
    a = 365.0
    z_max = delay_z_max(delay, a)
    rng = RngStream(17)
    _, z = thin_reporting(psi, 0.0, z_max, 1, rng.generator(PURPOSE_REPORTING))
    w = cd.sample(delay, z, rng.generator(PURPOSE_DELAYS))
    t = z - w
    edges = np.arange(30.0, 331.0, 30.0)
    bins = np.column_stack([edges[:-1], edges[1:]])
    realised = np.histogram(t, edges)[0]
    predicted = backpredict_counts(psi, delay, bins, horizon_a=a)
    assert np.all(np.abs(predicted - realised) <= 4 * np.sqrt(predicted))


def test_bad_bins_rejected():
    with pytest.raises(DomainError):
        backpredict_counts(CONST, DELAY, [(5.0, 1.0)])


def test_exports(tmp_path):
    oi = occurrence_intensity(CONST, DELAY, [100.0, 200.0], horizon_a=365.0)
    write_intensity_csv(oi, tmp_path / "mu.csv")
    lines = (tmp_path / "mu.csv").read_text().splitlines()
    assert lines[0] == "t,mu,extrapolated"
    assert len(lines) == 3
    write_counts_csv([(0, 1), (1, 2)], [0.5, 0.25], tmp_path / "n.csv")
    assert (tmp_path / "n.csv").read_text().splitlines()[1] == "0.0,1.0,0.5,0"


def test_distribution_json():
    d = _dist([3.0, 1.0, 2.0])
    out = d.to_dict()
    assert out["totals"] == [1.0, 2.0, 3.0]
    assert out["summary"]["median"] == 2.0
