import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlfdm.evaluate import (REPORT_COLUMNS, BacktestPlan, build_report, evaluate,
                            interval_score, max_metrics, point_metrics, rolling_origin,
                            score_metrics)
from mlfdm.methods import MethodSpec
from oracles import hand_metrics

finite = st.floats(-100, 100, allow_nan=False)


def test_point_metric_fixtures():
    actual = np.zeros((2, 2))
    forecast = -np.array([[1.0, -1.0], [3.0, -3.0]])
    assert point_metrics(forecast, actual) == pytest.approx(
        {"MAFE": 2.0, "RMSFE": math.sqrt(5), "MFE": 0.0})
    assert point_metrics(actual, actual) == {"MAFE": 0.0, "RMSFE": 0.0, "MFE": 0.0}
    c = point_metrics(actual - 0.7, actual)
    assert c == pytest.approx({"MAFE": 0.7, "RMSFE": 0.7, "MFE": 0.7})


@given(st.lists(finite, min_size=1, max_size=40))
def test_point_metrics_match_hand_sums(errors):
    e = np.array(errors)
    got = point_metrics(np.zeros_like(e), e)
    want = hand_metrics(e)
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-9)
    assert got["RMSFE"] >= abs(got["MFE"]) - 1e-12
    mx = max_metrics(np.zeros_like(e), e)
    assert mx["max_AFE"] >= got["MAFE"] - 1e-12
    assert mx["max_RSFE"] == pytest.approx(mx["max_AFE"])


def test_max_metrics_outlier():
    e = np.zeros(10)
    e[3] = 5.0
    assert max_metrics(np.zeros(10), e) == {"max_AFE": 5.0, "max_RSFE": 5.0}


def test_empty_or_misaligned_inputs():
    with pytest.raises(ValueError):
        point_metrics(np.array([np.nan]), np.array([1.0]))
    with pytest.raises(ValueError):
        point_metrics(np.zeros(3), np.zeros(4))


def test_interval_score_cases():
    assert interval_score(1, 3, 2, 0.2) == pytest.approx(2.0)
    assert interval_score(1, 3, 4, 0.2) == pytest.approx(12.0)
    assert interval_score(1, 3, 0, 0.2) == pytest.approx(12.0)
    with pytest.raises(ValueError):
        interval_score(3, 1, 2)
    with pytest.raises(ValueError):
        interval_score(1, 3, 2, 1.0)


@given(st.lists(st.tuples(finite, st.floats(0, 50), st.floats(0, 1)), min_size=1, max_size=30),
       st.floats(0.01, 5))
def test_score_metric_properties(rows, widen):
    l = np.array([r[0] for r in rows])
    w = np.array([r[1] for r in rows])
    y = l + w * np.array([r[2] for r in rows])
    s = score_metrics(l, l + w, y)
    assert s["mean_interval_score"] == pytest.approx(w.mean())
    assert s["max_interval_score"] >= s["mean_interval_score"] - 1e-9
    wider = score_metrics(l - widen, l + w, y)
    assert wider["mean_interval_score"] > s["mean_interval_score"]


def test_interval_score_minimised_at_true_quantiles():
    y = np.random.default_rng(0).standard_normal(10_000)
    q = 1.2815515655446004

    def mean_score(lo, hi):
        return float(np.mean(interval_score(np.full_like(y, lo), np.full_like(y, hi), y)))

    best = mean_score(-q, q)
    for dl, du in ((0.2, 0), (-0.2, 0), (0, 0.2), (0, -0.2), (0.3, -0.3), (-0.3, 0.3)):
        assert mean_score(-q + dl, q + du) > best


@given(st.integers(0, 1000))
def test_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    f, a = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    perm_r, perm_c = rng.permutation(5), rng.permutation(7)
    base = {**point_metrics(f, a), **max_metrics(f, a)}
    moved = {**point_metrics(f[perm_r][:, perm_c], a[perm_r][:, perm_c]),
             **max_metrics(f[perm_r][:, perm_c], a[perm_r][:, perm_c])}
    for k in base:
        assert moved[k] == pytest.approx(base[k], rel=1e-12, abs=1e-15)


def test_plan_counts():
    plan = BacktestPlan(holdout=30)
    assert plan.training_lengths(40) == list(range(10, 40))
    assert plan.expected_count(1) == 30 and plan.expected_count(30) == 1
    with pytest.raises(ValueError):
        plan.validate(30)
    with pytest.raises(ValueError):
        BacktestPlan(holdout=0)
    with pytest.raises(ValueError):
        BacktestPlan(interval_engine="bootstrap")


SMALL = dict(holdout=4, n_paths=100, smoothing_alpha=1.0, seed=2)


@pytest.fixture(scope="module")
def small_eval(two_sex):
    plan = BacktestPlan(methods=(MethodSpec("lee_carter"), MethodSpec("multilevel_fdm", "rwd")),
                        **SMALL)
    return evaluate(two_sex, plan)


def test_rolling_origin_counts(small_eval, two_sex):
    report, results = small_eval
    for res in results:
        assert not res.failures
        for pop in res.populations:
            np.testing.assert_array_equal(res.counts(pop), [4, 3, 2, 1])
        assert list(res.origin_years) == list(two_sex.years[35:39])
    rows = [r for r in report.rows if r["metric"] == "mortality_MAFE"
            and isinstance(r["horizon"], int)]
    assert {r["n_forecasts"] for r in rows if r["horizon"] == 2} == {3}


def test_report_structure(small_eval):
    report, _ = small_eval
    assert report.methods == ["Lee-Carter", "Multilevel FDM (rwf)"]
    text = report.to_csv()
    assert text.splitlines()[0] == ",".join(REPORT_COLUMNS)
    need = {"mortality_MAFE", "mortality_RMSFE", "mortality_MFE", "mortality_max_AFE",
            "mortality_max_RSFE", "mortality_mean_interval_score",
            "mortality_max_interval_score", "e0_MAFE", "e0_mean_interval_score"}
    assert need <= set(report.metrics)
    for m in report.methods:
        for pop in ("mean",):
            for h in (1, "mean", "mean_weighted"):
                assert np.isfinite(report.value(m, pop, h, "mortality_MAFE"))
        r = report.value(m, "mean", 1, "mortality_RMSFE")
        assert r >= abs(report.value(m, "mean", 1, "mortality_MFE"))
        assert report.value(m, "mean", 1, "mortality_max_AFE") >= \
            report.value(m, "mean", 1, "mortality_MAFE")


def test_report_is_byte_identical(small_eval, two_sex):
    report, _ = small_eval
    plan = BacktestPlan(methods=(MethodSpec("lee_carter"), MethodSpec("multilevel_fdm", "rwd")),
                        **SMALL)
    again, _ = evaluate(two_sex, plan)
    assert again.to_csv() == report.to_csv()


def test_method_failure_is_reported(two_sex):
    plan = BacktestPlan(methods=(MethodSpec("product_ratio"),), intervals=False, **{
        k: v for k, v in SMALL.items() if k != "n_paths"})
    from mlfdm.methods import PopulationGroup

    ds = two_sex
    # a group with a single member cannot be split into a sex pair
    fem = [p for p in ds.populations if p.sex == "female"][0]
    group = PopulationGroup(ds.grid.ages.astype(float), (fem,), None,
                            {fem: ds.log_rates(fem)}, {}, None)
    res = rolling_origin(ds, plan, MethodSpec("product_ratio"), group)
    assert len(res.failures) == 4
    report = build_report([res])
    excl = [r for r in report.rows if r["metric"] == "excluded_forecasts"
            and isinstance(r["horizon"], int)]
    assert [r["value"] for r in excl] == [4.0, 3.0, 2.0, 1.0]
