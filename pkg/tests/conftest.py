import datetime as dt

import numpy as np

import pytest

from microforecast.claims_data import ClaimRecord, Portfolio

ORIGIN = dt.date(2020, 1, 1)


def make_portfolio(zs, a, payments=None, origin=ORIGIN):
    """Portfolio with occurrence = reporting time, optional payment lists per claim."""
    payments = payments or [()] * len(zs)
    recs = [
        ClaimRecord(f"c{i}", "A", float(z), float(z), tuple(pays))
        for i, (z, pays) in enumerate(zip(zs, payments))
    ]
    return Portfolio(tuple(recs), a, origin)


@pytest.fixture
def toy_reporting():
    return make_portfolio([1.0, 2.0, 3.0], 4.0)


@pytest.fixture
def toy_marks():
    # N_1(4) = 2, N_2(4) = 1
    return make_portfolio([1.0, 2.0], 4.0, [((1.5, 10.0), (3.0, 5.0)), ((2.5, 7.0),)])


def numdiff(f, p, scale=None, rel=1e-4):
    """Richardson-extrapolated central differences of f (scalar or array valued).

    The step for parameter j is ``rel * scale[j]``; ``scale`` should be the
    parameter change that moves f by O(1) in relative terms.
    """
    p = np.asarray(p, dtype=float)
    if scale is None:
        scale = np.maximum(1.0, np.abs(p))
    cols = []
    for j in range(p.size):
        h = rel * float(scale[j])

        def cd(step):
            up, dn = p.copy(), p.copy()
            up[j] += step
            dn[j] -= step
            return (np.asarray(f(up), dtype=float) - np.asarray(f(dn), dtype=float)) / (2 * step)

        cols.append((4.0 * cd(h / 2) - cd(h)) / 3.0)
    return np.stack(cols, axis=-1)


def assert_derivative(analytic, reference, rtol=1e-5):
    """Entrywise agreement at ``rtol``, measured against the largest entry."""
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    scale = max(float(np.max(np.abs(reference))), 1e-300)
    np.testing.assert_allclose(analytic, reference, rtol=rtol, atol=rtol * scale)


# acceptance reporting ------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is None or not (rep.when == "call" or rep.failed):
        return
    detail = "; ".join(str(v) for k, v in rep.user_properties if k == "detail")
    _ACCEPTANCE[m.args[0]] = (m.args[1], rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        line = f"C{n:<2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
