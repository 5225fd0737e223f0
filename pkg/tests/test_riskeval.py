import json
import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpvc.riskeval import (
    BacktestReport,
    ConfigError,
    MetricError,
    MetricReport,
    arr,
    backtest,
    chi2_sf,
    classification_metrics,
    coverage_tests,
    exceedances,
    historical_var,
    portfolio_return,
    regression_metrics,
    strategy_returns,
    var_forecast,
)


def lr_uc_oracle(T, x, alpha):
    mpmath.mp.dps = 40
    T, x, a = mpmath.mpf(T), mpmath.mpf(x), mpmath.mpf(alpha)
    pi = x / T

    def ll(p):
        return ((T - x) * mpmath.log(1 - p) if T - x else 0) + (x * mpmath.log(p) if x else 0)

    return float(-2 * (ll(a) - ll(pi)))


def chi2_sf_oracle(x, df):
    mpmath.mp.dps = 30
    k = mpmath.mpf(df) / 2
    pdf = lambda t: t ** (k - 1) * mpmath.exp(-t / 2) / (2**k * mpmath.gamma(k))  # noqa: E731
    return float(mpmath.quad(pdf, [x, x + 10, x + 50, mpmath.inf]))


def indicators(T, positions):
    I = np.zeros(T, int)
    I[list(positions)] = 1
    return I


# -- regression and classification metrics ----------------------------------------

def test_regression_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert regression_metrics(a, a) == (0.0, 0.0, 0.0)
    m = regression_metrics(a, np.full(3, a.mean()))
    assert m[1] == pytest.approx(1.0) and m[2] == pytest.approx(1.0)
    assert regression_metrics(a, [1.1, 1.9, 3.3])[0] == pytest.approx(0.0833333333, abs=1e-9)


def test_regression_errors_and_zero_actuals():
    with pytest.raises(MetricError):
        regression_metrics([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(MetricError):
        regression_metrics([1.0], [1.0])
    with pytest.warns(RuntimeWarning, match="zero actual"):
        m = regression_metrics([0.0, 1.0, 2.0], [0.5, 1.5, 2.0])
    assert m[0] == pytest.approx(0.25)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 10), st.floats(-10, 10)), min_size=3, max_size=20),
       st.floats(0.01, 100))
def test_regression_scale_invariance(pairs, k):
    a = np.array([p[0] for p in pairs])
    p = np.array([q[1] for q in pairs])
    if np.ptp(a) < 1e-3:
        return
    np.testing.assert_allclose(regression_metrics(k * a, k * p), regression_metrics(a, p), rtol=1e-9)


def test_classification_examples():
    up = ["up", "down", "up", "down"]
    assert classification_metrics(up, up) == (1.0, 1.0, 1.0)
    assert classification_metrics(up, ["up"] * 4) == (0.5, 1.0, 0.5)
    a = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0]
    p = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
    prec, rec, acc = classification_metrics(a, p)
    assert (prec, rec, acc) == pytest.approx((0.75, 0.6, 0.7))


def test_classification_undefined_precision():
    with pytest.warns(RuntimeWarning, match="precision"):
        prec, rec, acc = classification_metrics([1, 0, 1], [0, 0, 0])
    assert prec is None and rec == 0.0
    with pytest.raises(MetricError):
        classification_metrics(["up", "sideways"], ["up", "up"])
    with pytest.raises(MetricError):
        classification_metrics([1, 0], [1])


# -- portfolio and ARR ------------------------------------------------------------

def test_portfolio_examples():
    assert portfolio_return([[0.02, -0.02]])[0] == 0.0
    r = np.array([0.01, -0.03, 0.02])
    np.testing.assert_array_equal(portfolio_return(r), r)
    assert portfolio_return([[0.01, 0.02, 0.03, 0.04]])[0] == pytest.approx(0.025, abs=1e-15)
    with pytest.raises(ConfigError):
        portfolio_return([[0.1, 0.2]], [0.5, 0.6])
    with pytest.raises(ConfigError):
        portfolio_return([[0.1, 0.2]], [1.0])


def test_arr_examples():
    assert arr(np.zeros(10), 1) == 0.0
    assert arr(np.full(246, 0.001), 1) == pytest.approx(0.246, abs=1e-12)
    g = np.random.default_rng(0).normal(0, 0.01, 50)
    assert arr(2 * g, 2.5) == pytest.approx(2 * arr(g, 2.5))
    assert arr([0.1, 0.1], 2, compound=True) == pytest.approx(0.1)
    with pytest.raises(MetricError):
        arr([], 1)
    with pytest.raises(ConfigError):
        arr([0.1], 0)


def test_strategy_returns():
    np.testing.assert_array_equal(strategy_returns([0.01, -0.02], [0.9, 0.2]), [0.01, 0.02])


# -- VaR and exceedances --------------------------------------------------------------

def test_var_examples():
    assert var_forecast(0.0, 1.0, 0.95).threshold == pytest.approx(-1.64485, abs=1e-5)
    assert var_forecast(0.0, 1.0, 0.90).threshold == pytest.approx(-1.28155, abs=1e-5)
    assert var_forecast(0.0, 1.0, 0.99).threshold == pytest.approx(-2.32635, abs=1e-5)
    assert var_forecast(0.3, 1e-12, 0.99).threshold == pytest.approx(0.3, abs=1e-10)
    s = np.array([0.1, 1.0, 3.0])
    assert np.all(var_forecast(0, s, 0.99).threshold < var_forecast(0, s, 0.95).threshold)
    for bad in (0.5, 1.0, 1.2):
        with pytest.raises(ConfigError):
            var_forecast(0, 1, bad)


def test_exceedance_examples():
    th = var_forecast(np.zeros(5), np.ones(5), 0.95)
    vs, count, rate = exceedances(np.zeros(5), th)
    assert count == 0 and rate == 0.0 and np.all(vs.indicators == 0)
    vs, count, rate = exceedances(np.zeros(5), var_forecast(np.full(5, 1e9), np.ones(5), 0.51))
    assert count == 5 and rate == 1.0
    g = np.zeros(246)
    g[np.arange(12) * 20] = -5.0
    vs, count, rate = exceedances(g, var_forecast(np.zeros(246), np.ones(246), 0.95))
    assert count == 12 and round(100 * rate, 2) == 4.88
    with pytest.raises(ValueError):
        exceedances(np.zeros(3), th)


def test_simulated_var_calibration():
    rng = np.random.default_rng(2024)
    n = 100_000
    mu = rng.normal(0, 0.01, n)
    sigma = rng.uniform(0.005, 0.03, n)
    g = mu + sigma * rng.standard_normal(n)
    for lvl in (0.90, 0.95, 0.99):
        _, count, rate = exceedances(g, var_forecast(mu, sigma, lvl))
        a = 1 - lvl
        assert abs(rate - a) <= 3 * math.sqrt(a * (1 - a) / n)


def test_historical_var():
    g = np.random.default_rng(3).normal(size=400)
    vs = historical_var(g, 0.95, window=250)
    assert np.all(np.isnan(vs.threshold[:250]))
    assert vs.threshold[300] == pytest.approx(np.quantile(g[50:300], 0.05))


# -- coverage tests ---------------------------------------------------------------

def test_lr_uc_examples():
    r = coverage_tests(indicators(200, range(0, 200, 20)), 0.95)
    assert r.lr_uc == pytest.approx(0.0, abs=1e-12)
    r = coverage_tests(indicators(246, range(0, 240, 20)), 0.95)
    assert r.count == 12 and round(100 * r.rate, 2) == 4.88
    assert r.lr_uc == pytest.approx(0.00778, abs=5e-5)
    assert abs(r.lr_uc - lr_uc_oracle(246, 12, 0.05)) <= 1e-10


def test_lr_uc_matches_oracle():
    for T, x in [(246, 0), (246, 3), (500, 40), (1000, 7), (250, 250)]:
        ref = lr_uc_oracle(T, x, 0.05)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            got = coverage_tests(indicators(T, range(x)), 0.95).lr_uc
        assert abs(got - ref) <= 1e-8 * max(1, ref)


def test_lr_it_zero_when_transitions_match():
    # n00=4, n01=2, n10=2, n11=1: pi01 = pi11 = 1/3
    I = np.array([0, 0, 0, 0, 1, 1, 0, 0, 1, 0])
    r = coverage_tests(I, 0.95)
    assert r.lr_it == pytest.approx(0.0, abs=1e-12)


def test_lr_it_undefined_without_exceedances():
    with pytest.warns(RuntimeWarning, match="undefined"):
        r = coverage_tests(np.zeros(50, int), 0.95)
    assert r.lr_it is None and r.lr_cc is None and r.pass_cc is None
    assert r.lr_uc >= 0 and math.isfinite(r.lr_uc)
    assert r.diagnostics


def test_coverage_input_checks():
    with pytest.raises(ValueError):
        coverage_tests([1], 0.95)
    with pytest.raises(ValueError):
        coverage_tests([0, 2, 1], 0.95)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=300), st.sampled_from([0.90, 0.95, 0.99]))
def test_lr_statistics_nonnegative_and_additive(bits, lvl):
    I = np.array(bits, int)
    if np.all(I[:-1] == 0) or np.all(I[:-1] == 1):
        return
    r = coverage_tests(I, lvl)
    assert r.lr_uc >= 0 and r.lr_it >= 0
    assert r.lr_cc == r.lr_uc + r.lr_it
    assert r.pass_uc == (r.lr_uc < 3.841) and r.pass_cc == (r.lr_cc < 5.991)


def test_chi2_p_values_match_integration():
    xs = np.linspace(0.01, 25, 50)
    for df in (1, 2):
        for x in xs:
            assert abs(chi2_sf(x, df) - chi2_sf_oracle(x, df)) <= 1e-8


# -- reports --------------------------------------------------------------------------

def test_backtest_report_json():
    rng = np.random.default_rng(4)
    mu, sig = np.zeros(300), np.ones(300)
    g = rng.standard_normal(300)
    rep = BacktestReport(backtest(g, mu, sig), MetricReport(0.1, 0.9, 0.95, 0.6, 0.5, 0.55), 0.12)
    d = json.loads(rep.to_json())
    assert set(d["levels"]) == {"0.90", "0.95", "0.99"}
    fields = {"count", "rate", "lr_uc", "p_uc", "lr_it", "p_it", "lr_cc", "p_cc", "pass_uc", "pass_it", "pass_cc"}
    for v in d["levels"].values():
        assert set(v) == fields
    assert d["metrics"]["rse"] == 0.95 and d["arr"] == 0.12
    text = rep.table()
    assert "LR_CC" in text and "ARR 12.00%" in text
    none_prec = BacktestReport({}, MetricReport(0.1, 0.9, 0.95, None, 0.5, 0.55))
    assert json.loads(none_prec.to_json())["metrics"]["precision"] is None
