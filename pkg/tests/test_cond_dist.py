import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from microforecast import cond_dist as cd
from microforecast.cond_dist import CondDistModel
from microforecast.errors import InputError, ParameterError

from conftest import assert_derivative, numdiff

# 30-digit mpmath reference values
GAMMA_CDF_4 = 0.248788289633878641237330652309  # shape 2.5, scale 3
GAMMA_Q_090 = 13.8545353496716776771538963678
WEIBULL_CDF_2 = 0.394640008909862194711798211081  # shape 1.7, scale 3
WEIBULL_MEAN = 2.67673350749797262269598575405
LOGNORMAL_CDF_2 = 0.688440230545006554489310306857  # c 0.3, d 0.8

SEASONAL = CondDistModel(
    "lognormal", 2, True,
    (1.5, 0.01, 0.3, 1.0, 0.2, 0.1, 2.0, -0.1),
    (0.8, 0.002, 0.1, 1.0, 0.05, 0.05, 2.0, 0.0),
)


def test_param_c_examples():
    assert cd.param_c(CondDistModel("lognormal", 0, False, (1.3, 0.0), (1.0, 0.0)), 123.0) == 1.3
    assert cd.param_c(CondDistModel("lognormal", 0, True, (0.0, 1.0), (1.0, 0.0)), 14.0) == 2.0
    m = CondDistModel("lognormal", 1, False, (0.0, 0.0, 1.0, 1.0, 0.0), (1.0, 0.0, 0.0, 1.0, 0.0))
    assert cd.param_c(m, 364.0) == pytest.approx(1.0, abs=1e-14)


def test_lognormal_examples():
    m = cd.constant_model("lognormal", 0.0, 1.0)
    assert cd.density(m, 1.0, 0.0) == pytest.approx(0.3989422804014327, rel=1e-14)
    assert cd.cdf(m, 1.0, 0.0) == 0.5
    assert cd.quantile(m, 0.5, 0.0) == 1.0
    assert cd.density(m, 0.0, 0.0) == 0.0


def test_gamma_shape_one_boundary():
    m = cd.constant_model("gamma", 1.0, 2.0)
    assert cd.density(m, 0.0, 0.0) == pytest.approx(0.5)
    assert cd.density(m, 1e-12, 0.0) == pytest.approx(0.5, rel=1e-10)


def test_reference_values():
    g = cd.constant_model("gamma", 2.5, 3.0)
    assert cd.cdf(g, 4.0, 0.0) == pytest.approx(GAMMA_CDF_4, rel=1e-12)
    assert cd.quantile(g, 0.9, 0.0) == pytest.approx(GAMMA_Q_090, rel=1e-10)
    assert cd.mean(g, 0.0) == pytest.approx(7.5)
    w = cd.constant_model("weibull", 1.7, 3.0)
    assert cd.cdf(w, 2.0, 0.0) == pytest.approx(WEIBULL_CDF_2, rel=1e-12)
    assert cd.mean(w, 0.0) == pytest.approx(WEIBULL_MEAN, rel=1e-12)
    ln = cd.constant_model("lognormal", 0.3, 0.8)
    assert cd.cdf(ln, 2.0, 0.0) == pytest.approx(LOGNORMAL_CDF_2, rel=1e-12)
    assert cd.mean(ln, 0.0) == pytest.approx(math.exp(0.3 + 0.32), rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(
    fam=st.sampled_from(cd.FAMILIES),
    c=st.floats(0.2, 5.0),
    d=st.floats(0.1, 5.0),
    u=st.floats(1e-6, 1 - 1e-6),
)
def test_quantile_inverts_cdf(fam, c, d, u):
    m = cd.constant_model(fam, c, d)
    x = cd.quantile(m, u, 0.0)
    assert cd.cdf(m, x, 0.0) == pytest.approx(u, rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(fam=st.sampled_from(cd.FAMILIES), c=st.floats(0.3, 4.0), d=st.floats(0.2, 3.0))
def test_density_integrates_to_cdf(fam, c, d):
    from scipy.integrate import quad

    m = cd.constant_model(fam, c, d)
    x = cd.quantile(m, 0.7, 0.0)
    val, _ = quad(lambda s: cd.density(m, s, 0.0), 0.0, x, epsabs=1e-12, epsrel=1e-10, limit=200)
    assert val == pytest.approx(0.7, rel=1e-6)


def test_nonpositive_parameters_raise_with_z():
    m = CondDistModel("gamma", 0, True, (1.0, -0.1), (1.0, 0.0))
    with pytest.raises(ParameterError) as exc:
        cd.density(m, 1.0, 140.0)
    assert exc.value.z == 140.0


def test_trend_coefficient_must_vanish_without_trend():
    with pytest.raises(InputError):
        CondDistModel("lognormal", 0, False, (1.0, 0.5), (1.0, 0.0))


def test_lognormal_closed_form_fit():
    x = np.array([1.0, math.e ** 2] * 5)
    r = cd.fit(np.column_stack([np.arange(x.size, dtype=float), x]), "lognormal")
    assert r.converged
    assert cd.param_c(r.model, 0.0) == pytest.approx(1.0, abs=1e-8)
    assert cd.param_d(r.model, 0.0) == pytest.approx(1.0, abs=1e-8)


def test_two_point_fit_with_lowered_minimum():
    r = cd.fit([(0.0, 1.0), (1.0, math.e ** 2)], "lognormal", min_obs=2)
    assert cd.param_c(r.model, 0.0) == pytest.approx(1.0, abs=1e-8)
    assert cd.param_d(r.model, 0.0) == pytest.approx(1.0, abs=1e-8)


def test_degenerate_sample_flags_non_convergence():
    obs = [(float(i), 3.0) for i in range(20)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = cd.fit(obs, "lognormal")
    assert not r.converged


def test_too_few_observations():
    with pytest.raises(InputError):
        cd.fit([(0.0, 1.0)] * 5, "lognormal", L=1)


@pytest.mark.parametrize("fam,c,d", [("weibull", 1.4, 20.0), ("gamma", 2.0, 8.0)])
def test_constant_fit_recovers_truth(fam, c, d):
    g = np.random.default_rng(7)
    truth = cd.constant_model(fam, c, d)
    z = np.sort(g.uniform(0, 700, 2000))
    x = cd.sample(truth, z, g)
    r = cd.fit(np.column_stack([z, x]), fam)
    assert r.converged
    est = np.array([cd.param_c(r.model, 0.0), cd.param_d(r.model, 0.0)])
    assert np.all(np.abs(est - [c, d]) <= 4 * np.asarray(r.std_errors))


def _pointwise_se(r, z):
    m = r.model
    k = cd.n_coefficients(m.L)
    mask = m.free_mask()
    cov = np.linalg.inv(r.information)
    G1 = cd._fourier_grad(m.theta1, z)[:, mask[:k]]
    G2 = cd._fourier_grad(m.theta2, z)[:, mask[k:]]
    n1 = G1.shape[1]
    se1 = np.sqrt(np.einsum("ij,jk,ik->i", G1, cov[:n1, :n1], G1))
    se2 = np.sqrt(np.einsum("ij,jk,ik->i", G2, cov[n1:, n1:], G2))
    return se1, se2


def test_seasonal_fit_pointwise_coverage():
    hits = total = 0
    for seed in range(200):
        g = np.random.default_rng(seed)
        z = np.sort(g.uniform(0, 1000, 400))
        x = cd.sample(SEASONAL, z, g)
        r = cd.fit(np.column_stack([z, x]), "lognormal", L=2, trend=True)
        zq = np.quantile(z, np.linspace(0.1, 0.9, 9))
        se1, se2 = _pointwise_se(r, zq)
        ok_c = np.abs(cd.param_c(r.model, zq) - cd.param_c(SEASONAL, zq)) <= 4 * se1
        ok_d = np.abs(cd.param_d(r.model, zq) - cd.param_d(SEASONAL, zq)) <= 4 * se2
        hits += int(ok_c.sum() + ok_d.sum()) if r.converged else 0
        total += 2 * zq.size
    assert hits >= 0.95 * total


def test_pit_examples():
    m = SEASONAL
    z = 100.0
    out = cd.pit_transform(m, [(z, cd.quantile(m, 0.5, z)), (z, cd.quantile(m, 0.975, z))])
    assert out[0] == pytest.approx(0.0, abs=1e-12)
    assert out[1] == pytest.approx(1.959963984540054, rel=1e-10)


@pytest.mark.parametrize("fam,c,d", [("lognormal", 1.0, 0.7), ("weibull", 0.8, 5.0), ("gamma", 3.0, 2.0)])
def test_pit_of_model_data_is_standard_normal(fam, c, d):
    m = cd.constant_model(fam, c, d)
    g = np.random.default_rng(11)
    n = 20_000
    z = g.uniform(0, 500, n)
    y = cd.pit_transform(m, np.column_stack([z, cd.sample(m, z, g)]))
    assert abs(y.mean()) <= 4 / math.sqrt(n)
    assert abs(y.var(ddof=1) - 1) <= 4 * math.sqrt(2 / n)
    assert stats.kstest(y, "norm").pvalue > 1e-4


def test_pit_clamps_extreme_values():
    m = cd.constant_model("lognormal", 0.0, 0.1)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        y = cd.pit_transform(m, [(0.0, 1e6)])
    assert np.isfinite(y[0])


@pytest.mark.parametrize("fam", cd.FAMILIES)
def test_score_matches_numerical_derivative(fam):
    g = np.random.default_rng(3)
    base = {"lognormal": (1.0, 0.6), "weibull": (1.3, 4.0), "gamma": (2.0, 3.0)}[fam]
    m = CondDistModel(
        fam, 1, True,
        (base[0], 0.001, 0.1, 1.0, -0.05),
        (base[1], 0.0005, 0.05, 1.0, 0.02),
    )
    z = g.uniform(0, 700, 300)
    obs = np.column_stack([z, cd.sample(m, z, g)])
    scale = np.array([1.0, 7 / 700, 1.0, 0.5, 1.0] * 2)
    ll = lambda q: cd.loglik(m.with_params(q), obs)
    assert_derivative(cd.score(m, obs), numdiff(ll, m.params, scale))


def test_sampling_moments():
    g = np.random.default_rng(5)
    for fam, c, d in [("lognormal", 0.5, 0.4), ("weibull", 2.0, 3.0), ("gamma", 2.5, 1.5)]:
        m = cd.constant_model(fam, c, d)
        x = cd.sample(m, np.zeros(200_000), g)
        mu = cd.mean(m, 0.0)
        assert abs(x.mean() - mu) <= 4 * x.std() / math.sqrt(x.size)


def test_serialisation_round_trip():
    assert CondDistModel.from_json(SEASONAL.to_json()) == SEASONAL
    with pytest.raises(InputError):
        CondDistModel.from_dict({**SEASONAL.to_dict(), "bogus": 1})
