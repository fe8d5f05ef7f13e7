import json

import numpy as np
import pytest

from microforecast import cli, forecast
from microforecast.claims_data import CSV_COLUMNS, load_csv
from microforecast.errors import NumericalError

TOY_CSV = (
    ",".join(CSV_COLUMNS) + "\n"
    "c1,A,2020-01-01,2020-01-02,,\n"
    "c2,A,2020-01-02,2020-01-03,,\n"
    "c3,A,2020-01-03,2020-01-04,,\n"
)

GROUND_TRUTH = {
    "reporting": {"family": "exponential", "params": [0.0, 0.001]},
    "delay": {"family": "lognormal", "L": 0, "trend": False, "theta1": [1.5, 0.0], "theta2": [0.7, 0.0]},
    "mark": {"family": "constant_mark", "params": [0.02]},
    "amounts": {"family": "lognormal", "L": 0, "trend": False, "theta1": [4.0, 0.0], "theta2": [1.0, 0.0]},
    "horizon_a": 730.0,
    "seed": 2024,
    "origin_date": "2018-01-01",
}

FULL_CONFIG = {
    "schema_version": 1,
    "origin_date": "2018-01-01",
    "horizon_a": 730.0,
    "reporting": {"family": "exponential"},
    "mark": {"family": "constant_mark"},
    "delay": {"family": "lognormal"},
    "amounts": {"family": "lognormal"},
}


def _json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


@pytest.fixture
def fitted(tmp_path):
    """Synthetic data, its fitted bundle and the paths involved."""
    spec = _json(tmp_path / "gt.json", GROUND_TRUTH)
    data = str(tmp_path / "data.csv")
    assert cli.main(["synth", spec, data]) == 0
    cfg = _json(tmp_path / "cfg.json", FULL_CONFIG)
    bundle = str(tmp_path / "bundle.json")
    assert cli.main(["fit", cfg, data, bundle]) == 0
    return tmp_path, data, bundle


def test_fit_toy_constant(tmp_path):
    data = tmp_path / "toy.csv"
    data.write_text(TOY_CSV, encoding="utf-8")
    cfg = _json(tmp_path / "cfg.json", {
        "schema_version": 1, "origin_date": "2020-01-01", "horizon_a": 4.0,
        "reporting": {"family": "constant"},
    })
    out = tmp_path / "bundle.json"
    assert cli.main(["fit", cfg, str(data), str(out)]) == 0
    b = json.loads(out.read_text())
    assert b["components"]["reporting"]["fit"]["estimate"][0] == pytest.approx(0.75, rel=1e-10)
    assert b["converged"] is True


def test_unknown_family_is_input_error(tmp_path, capsys):
    data = tmp_path / "toy.csv"
    data.write_text(TOY_CSV, encoding="utf-8")
    cfg = _json(tmp_path / "cfg.json", {"schema_version": 1, "reporting": {"family": "linear"}})
    assert cli.main(["fit", cfg, str(data), str(tmp_path / "b.json")]) == 1
    err = capsys.readouterr().err
    assert "reporting.family" in err and "linear" in err


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = _json(tmp_path / "cfg.json", {"schema_version": 1, "reporting": {"family": "constant"}, "colour": 1})
    assert cli.main(["fit", cfg, "missing.csv", str(tmp_path / "b.json")]) == 1
    assert "colour" in capsys.readouterr().err


def test_missing_data_file_is_input_error(tmp_path):
    cfg = _json(tmp_path / "cfg.json", {"schema_version": 1, "reporting": {"family": "constant"}})
    assert cli.main(["fit", cfg, str(tmp_path / "nope.csv"), str(tmp_path / "b.json")]) == 1


def test_fit_recovers_ground_truth(fitted):
    _, _, bundle = fitted
    b = json.loads(open(bundle).read())
    assert b["converged"]
    truth = {
        "reporting": GROUND_TRUTH["reporting"]["params"],
        "mark": GROUND_TRUTH["mark"]["params"],
        "delay": [1.5, 0.7],
        "amounts": [4.0, 1.0],
    }
    for key, true in truth.items():
        fit = b["components"][key]["fit"]
        est, se = np.array(fit["estimate"]), np.array(fit["std_errors"])
        assert np.all(np.abs(est - true) <= 4 * se), key


def test_partial_convergence_exit_code(tmp_path):
    data = tmp_path / "toy.csv"
    data.write_text(TOY_CSV, encoding="utf-8")
    cfg = _json(tmp_path / "cfg.json", {
        "schema_version": 1, "origin_date": "2020-01-01", "horizon_a": 10.0,
        "reporting": {"family": "constant"}, "mark": {"family": "constant_mark"},
    })
    out = tmp_path / "b.json"
    assert cli.main(["fit", cfg, str(data), str(out)]) == 2
    b = json.loads(out.read_text())
    assert b["converged"] is False
    assert b["components"]["mark"]["fit"]["converged"] is False


def test_predict_is_reproducible(fitted):
    tmp, data, bundle = fitted
    outs = []
    for name in ("p1.json", "p2.json"):
        path = tmp / name
        assert cli.main(["predict", bundle, data, str(path), "--until", "800", "--sims", "200",
                         "--seed", "5"]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    d = json.loads(outs[0])
    assert d["S"] == 200
    assert set(d["summary"]) == {"mean", "median", "sd", "cv", "pct_lo", "pct_hi"}


def test_predict_single_simulation(fitted):
    tmp, data, bundle = fitted
    out = tmp / "p.json"
    assert cli.main(["predict", bundle, data, str(out), "--until", "800", "--sims", "1"]) == 0
    d = json.loads(out.read_text())
    assert d["S"] == 1
    assert d["summary"]["pct_lo"] == d["summary"]["pct_hi"] == d["totals"][0]


def test_predict_zero_intensity_bundle(tmp_path):
    data = tmp_path / "toy.csv"
    data.write_text(TOY_CSV, encoding="utf-8")
    zero_amounts = {"family": "lognormal", "L": 0, "trend": False, "theta1": [0.0, 0.0], "theta2": [1.0, 0.0]}
    bundle = _json(tmp_path / "b.json", {
        "schema_version": 1, "origin_date": "2020-01-01", "horizon_a": 4.0, "claim_type": None,
        "components": {
            "reporting": {"model": {"family": "constant", "params": [0.0]}, "fit": None},
            "mark": {"model": {"family": "constant_mark", "params": [0.0]}, "fit": None},
            "delay": None,
            "amounts": {"model": zero_amounts, "fit": None},
        },
        "converged": True,
    })
    out = tmp_path / "p.json"
    assert cli.main(["predict", bundle, str(data), str(out), "--until", "30", "--sims", "50"]) == 0
    assert json.loads(out.read_text())["totals"] == [0.0] * 50


def test_predict_until_must_exceed_horizon(fitted, capsys):
    tmp, data, bundle = fitted
    assert cli.main(["predict", bundle, data, str(tmp / "p.json"), "--until", "700"]) == 1
    assert "--until" in capsys.readouterr().err


def test_backpredict_outputs(fitted):
    tmp, _, bundle = fitted
    out = tmp / "bp"
    assert cli.main(["backpredict", bundle, str(out), "--bins", "0:730:73", "--grid-step", "30"]) == 0
    counts = np.loadtxt(out / "backpredicted_counts.csv", delimiter=",", skiprows=1)
    assert counts.shape == (10, 4)
    assert np.all(counts[:, 2] > 0)
    mu = np.loadtxt(out / "occurrence_intensity.csv", delimiter=",", skiprows=1)
    assert mu.shape[1] == 3
    assert cli.main(["backpredict", bundle, str(out), "--bins", "bogus"]) == 1


def test_diagnose_outputs(fitted):
    tmp, data, bundle = fitted
    out = tmp / "diag"
    assert cli.main(["diagnose", bundle, data, str(out), "--grid-step", "10"]) == 0
    for name in ("intensity_fit.csv", "delay_backtest.csv", "independence_correlations.csv"):
        assert (out / name).stat().st_size > 0


def test_simulate_is_deterministic(fitted):
    tmp, data, bundle = fitted
    outs = []
    for name in ("s1.csv", "s2.csv"):
        path = tmp / name
        assert cli.main(["simulate", bundle, str(path), "--window", "730", "800", "--data", data,
                         "--seed", "3"]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    p = load_csv(tmp / "s1.csv", __import__("datetime").date(2018, 1, 1), horizon_a=800.0)
    assert all(u > 730.0 for rec in p.records for u, _ in rec.payments)


def test_synth_zero_intensity_writes_header_only(tmp_path):
    spec = _json(tmp_path / "gt.json", {**GROUND_TRUTH, "reporting": {"family": "constant", "params": [0.0]}})
    out = tmp_path / "empty.csv"
    assert cli.main(["synth", spec, str(out)]) == 0
    assert out.read_text().splitlines() == [",".join(CSV_COLUMNS)]


def test_synth_holdout(tmp_path):
    spec = _json(tmp_path / "gt.json", GROUND_TRUTH)
    hold = tmp_path / "hold.json"
    assert cli.main(["synth", spec, str(tmp_path / "d.csv"), "--holdout-until", "800",
                     "--holdout-out", str(hold)]) == 0
    h = json.loads(hold.read_text())
    assert h["window"] == [730.0, 800.0]
    assert h["total"] >= 0


def test_numerical_failure_exit_code(fitted, monkeypatch):
    tmp, data, bundle = fitted

    def boom(*args, **kwargs):
        raise NumericalError("quadrature did not converge", 1e-3)

    monkeypatch.setattr(forecast, "predict_total", boom)
    assert cli.main(["predict", bundle, data, str(tmp / "p.json"), "--until", "800"]) == 3


def test_bad_seed_rejected():
    with pytest.raises(SystemExit):
        cli.main(["predict", "b", "d", "o", "--until", "1", "--seed", "-1"])
