import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlfdm.ts import (auto_arima, fit_ar1, fit_arfima, fit_arima, fit_rwd, fit_score_model,
                      forecast, gph_estimate, kpss_statistic, psi_weights, select_d)
from mlfdm.ts.arima import (ROOT_MARGIN, coef_to_pacf, min_root_modulus, near_unit_root,
                            pacf_to_coef)
from oracles import arma_exact_loglik


def ar1(n, phi, rng, burn=200, c=0.0):
    e = rng.standard_normal(n + burn)
    x = np.zeros(n + burn)
    for t in range(1, n + burn):
        x[t] = c + phi * x[t - 1] + e[t]
    return x[burn:]


# --- KPSS ------------------------------------------------------------------

def test_kpss_constant_series():
    r = kpss_statistic(np.full(30, 2.5))
    assert r.statistic == 0 and not r.reject_at_5pct


def test_kpss_matches_statsmodels():
    from statsmodels.tsa.stattools import kpss

    rng = np.random.default_rng(0)
    for x in (rng.standard_normal(200), np.cumsum(rng.standard_normal(150))):
        ours = kpss_statistic(x)
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            theirs = kpss(x, regression="c", nlags=ours.lags)[0]
        assert ours.statistic == pytest.approx(theirs, rel=1e-10)
        assert ours.lags == math.floor(4 * (len(x) / 100) ** 0.25)


def test_kpss_rejects_random_walks():
    rng = np.random.default_rng(1)
    rej = [kpss_statistic(np.cumsum(rng.standard_normal(200))).reject_at_5pct
           for _ in range(300)]
    assert np.mean(rej) >= 0.95


def test_kpss_needs_ten_points():
    with pytest.raises(ValueError):
        kpss_statistic(np.arange(5.0))


def test_select_d_cases():
    rng = np.random.default_rng(2)
    wn = [select_d(rng.standard_normal(100)) for _ in range(50)]
    rw = [select_d(np.cumsum(0.3 + rng.standard_normal(100))) for _ in range(50)]
    i2 = [select_d(np.cumsum(np.cumsum(rng.standard_normal(100)))) for _ in range(50)]
    assert np.mean(np.array(wn) == 0) > 0.5
    assert np.mean(np.array(rw) == 1) > 0.5
    assert np.mean(np.array(i2) == 2) > 0.5


# --- random walk with drift ---------------------------------------------------

def test_rwd_examples():
    fc = forecast(fit_rwd([1.0, 2, 3, 4]), 2)
    np.testing.assert_array_equal(fc.mean, [5.0, 6.0])
    flat = forecast(fit_rwd(np.full(8, 3.0)), 4)
    np.testing.assert_array_equal(flat.mean, 3.0)
    np.testing.assert_array_equal(flat.se, 0.0)


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=40),
       st.integers(1, 30))
def test_rwd_closed_form(values, H):
    y = np.array(values)
    m = fit_rwd(y)
    n = len(y)
    drift = (y[-1] - y[0]) / (n - 1)
    h = np.arange(1, H + 1)
    fc = m.forecast(H)
    np.testing.assert_array_equal(fc.mean, y[-1] + h * drift)
    np.testing.assert_allclose(fc.se, math.sqrt(m.sigma2) * np.sqrt(h * (1 + h / (n - 1))))
    assert np.all(np.diff(fc.se) >= 0)


def test_rwd_se_matches_simulation():
    rng = np.random.default_rng(3)
    n, H, reps = 30, 10, 4000
    cover = np.zeros(H)
    for _ in range(reps):
        y = np.cumsum(0.2 + rng.standard_normal(n + H))
        fc = fit_rwd(y[:n]).forecast(H)
        cover += np.abs(y[n:] - fc.mean) <= 1.96 * fc.se
    assert np.all(np.abs(cover / reps - 0.95) < 0.03)


# --- AR(1) ---------------------------------------------------------------------

def test_ar1_estimate():
    m = fit_ar1(ar1(1000, 0.5, np.random.default_rng(4)))
    assert abs(m.phi - 0.5) <= 0.06 and not m.flags


def test_ar1_constant_is_flagged():
    m = fit_ar1(np.full(10, 2.0))
    assert "projected" in m.flags
    np.testing.assert_allclose(m.forecast(5).mean, 2.0)


def test_ar1_long_run_mean():
    m = fit_ar1(ar1(300, 0.7, np.random.default_rng(5), c=1.0))
    fc = m.forecast(400)
    assert fc.mean[-1] == pytest.approx(m.intercept / (1 - m.phi), abs=1e-8)


# --- ARIMA ---------------------------------------------------------------------

@pytest.mark.parametrize("ar,ma", [([0.6], []), ([], [0.4]), ([0.5, -0.3], [0.2])])
def test_arima_loglik_matches_dense_oracle(ar, ma):
    x = ar1(120, 0.3, np.random.default_rng(6))
    m = fit_arima(x, (len(ar), 0, len(ma)), include_mean=False)
    oracle = arma_exact_loglik(x, m.ar, m.ma, m.sigma2)
    assert m.loglik == pytest.approx(oracle, abs=1e-6)


def test_arima_mle_at_least_as_good_as_statsmodels():
    from statsmodels.tsa.arima.model import ARIMA

    x = ar1(200, 0.7, np.random.default_rng(7))
    ours = fit_arima(x, (1, 0, 1), include_mean=True)
    theirs = ARIMA(x, order=(1, 0, 1), trend="c").fit()
    assert ours.loglik >= theirs.llf - 1e-3


def test_arima_residual_mean():
    x = ar1(400, 0.6, np.random.default_rng(8), c=0.5)
    m = fit_arima(x, (1, 0, 0))
    r = m.residuals()
    assert abs(r.mean()) <= 2 * math.sqrt(m.sigma2) / math.sqrt(len(r))


def test_aicc_prefers_true_order():
    rng = np.random.default_rng(9)
    wins = 0
    for _ in range(100):
        x = ar1(500, 0.8, rng)
        wins += fit_arima(x, (1, 0, 0)).aicc <= fit_arima(x, (0, 0, 0)).aicc
    assert wins >= 90


def test_auto_arima_white_noise_and_trend():
    rng = np.random.default_rng(10)
    hits = 0
    for _ in range(20):
        m = auto_arima(3.0 + rng.standard_normal(150))
        hits += m.order == (0, 0, 0) and m.include_mean
    assert hits >= 12
    trend = 0.5 * np.arange(100) + rng.standard_normal(100)
    assert auto_arima(trend).order[1] == 1


def test_auto_arima_fitted_roots_outside_unit_circle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        m = auto_arima(ar1(200, 0.9, rng))
        assert min_root_modulus(m.ar, -1.0) > ROOT_MARGIN - 1e-12
        assert min_root_modulus(m.ma, 1.0) > ROOT_MARGIN - 1e-12


def test_root_screen():
    assert near_unit_root(np.array([0.995]), np.zeros(0))
    assert not near_unit_root(np.array([0.9]), np.zeros(0))
    assert near_unit_root(np.zeros(0), np.array([-1.0]))
    assert min_root_modulus(np.array([0.5]), -1.0) == pytest.approx(2.0)


@given(st.lists(st.floats(-0.99, 0.99), min_size=1, max_size=5))
def test_pacf_parametrisation_round_trip(r):
    phi = pacf_to_coef(np.array(r))
    np.testing.assert_allclose(coef_to_pacf(phi), r, atol=1e-8)
    assert min_root_modulus(phi, -1.0) > 1.0


def test_arima_se_non_decreasing_when_integrated():
    x = np.cumsum(ar1(200, 0.4, np.random.default_rng(12)))
    fc = fit_arima(x, (1, 1, 0)).forecast(30)
    assert np.all(np.diff(fc.se) >= 0)


def test_arima_forecast_se_matches_simulation():
    rng = np.random.default_rng(13)
    m = fit_arima(ar1(300, 0.6, rng), (1, 0, 1))
    fc = m.forecast(8)
    sims = m.simulate(8, rng, size=20000)
    # simulation adds filtered-state uncertainty, which is tiny at the end of a long series
    np.testing.assert_allclose(sims.std(axis=0), fc.se, rtol=0.03)
    np.testing.assert_allclose(sims.mean(axis=0), fc.mean, atol=4 * fc.se.max() / math.sqrt(20000))


def test_psi_weights_known_cases():
    np.testing.assert_allclose(psi_weights([0.5], [], 4), [1, 0.5, 0.25, 0.125])
    np.testing.assert_allclose(psi_weights([], [0.3], 3), [1, 0.3, 0])
    np.testing.assert_allclose(psi_weights([], [], 4, d=1), [1, 1, 1, 1])


def test_apply_reuses_parameters():
    rng = np.random.default_rng(14)
    m = fit_arima(ar1(100, 0.5, rng), (1, 0, 0))
    other = ar1(100, 0.5, rng)
    m2 = m.apply(other)
    assert np.array_equal(m2.ar, m.ar) and m2.mean == m.mean
    assert m2.forecast(1).mean[0] == pytest.approx(m.mean + m.ar[0] * (other[-1] - m.mean))


# --- ARFIMA --------------------------------------------------------------------

def frac_noise(n, d, rng, terms=3000):
    g = np.empty(terms)
    g[0] = 1.0
    for k in range(1, terms):
        g[k] = g[k - 1] * (k - 1 + d) / k
    e = rng.standard_normal(n + terms)
    return np.convolve(e, g, mode="valid")[:n]


def test_gph_recovers_memory():
    rng = np.random.default_rng(15)
    est = [gph_estimate(frac_noise(1000, 0.3, rng)) for _ in range(30)]
    assert abs(np.mean(est) - 0.3) <= 0.1


def test_arfima_on_short_memory_matches_arima():
    rng = np.random.default_rng(16)
    x = ar1(300, 0.5, rng)
    a = fit_arfima(x).forecast(10)
    b = auto_arima(x).forecast(10)
    assert np.all(np.abs(a.mean - b.mean) <= b.se)


def test_arfima_reverts_to_mean():
    rng = np.random.default_rng(17)
    x = 2.0 + frac_noise(500, 0.2, rng)
    m = fit_arfima(x)
    assert -0.5 < m.d_frac < 0.5
    fc = m.forecast(400)
    assert abs(fc.mean[-1] - x.mean()) < abs(fc.mean[0] - x.mean()) + 0.05


def test_arfima_needs_thirty_points():
    with pytest.raises(ValueError):
        fit_arfima(np.arange(20.0))


def test_fit_score_model_dispatch():
    y = np.cumsum(np.random.default_rng(18).standard_normal(40))
    assert fit_score_model(y, "rwf").kind == "rwd"
    assert fit_score_model(y, "ar1").kind == "ar1"
    with pytest.raises(ValueError):
        fit_score_model(y, "nope")
