"""Rolling-origin backtests and forecast accuracy metrics.

Errors are ``actual - forecast`` on the rate scale. With a holdout of ``T``
years the training window grows from ``n - T`` to ``n - 1`` years, so each
horizon ``h`` is scored on ``T + 1 - h`` forecasts.
"""

from __future__ import annotations

import csv
import io
import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ._parallel import pmap
from .data import MortalityDataset
from .lifetable import life_expectancy
from .methods import BENCHMARK_METHODS, MethodSpec, PopulationGroup, fit_method, group_from_dataset
from .smooth import smooth_dataset
from .uncertainty import GibbsConfig, GibbsModel, run_gibbs, simulate_paths

REPORT_COLUMNS = ("method", "population", "horizon", "metric", "value", "n_forecasts")
POINT_METRICS = ("MAFE", "RMSFE", "MFE")
MAX_METRICS = ("max_AFE", "max_RSFE")
SCORE_METRICS = ("mean_interval_score", "max_interval_score")


# ---------------------------------------------------------------------------
# metrics


def _errors(forecasts, actuals) -> np.ndarray:
    f = np.asarray(forecasts, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if f.shape != a.shape:
        raise ValueError(f"forecasts {f.shape} and actuals {a.shape} are not aligned")
    e = (a - f).ravel()
    e = e[~np.isnan(e)]
    if e.size == 0:
        raise ValueError("no forecasts to score")
    return e


def point_metrics(forecasts, actuals) -> dict:
    """RMSFE, MAFE and MFE averaged over every age and forecast year given."""
    e = _errors(forecasts, actuals)
    return {"MAFE": float(np.mean(np.abs(e))), "RMSFE": float(math.sqrt(np.mean(e * e))),
            "MFE": float(np.mean(e))}


def max_metrics(forecasts, actuals) -> dict:
    e = _errors(forecasts, actuals)
    return {"max_AFE": float(np.max(np.abs(e))), "max_RSFE": float(math.sqrt(np.max(e * e)))}


def interval_score(lower, upper, actual, alpha: float = 0.2):
    """Interval score of a central (1 - alpha) interval; elementwise for arrays."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    l, u, y = (np.asarray(v, dtype=float) for v in (lower, upper, actual))
    if np.any(l > u):
        raise ValueError("lower bound exceeds upper bound")
    s = (u - l) + (2 / alpha) * (l - y) * (y < l) + (2 / alpha) * (y - u) * (y > u)
    return float(s) if s.ndim == 0 else s


def score_metrics(lower, upper, actual, alpha: float = 0.2) -> dict:
    l, u, y = (np.asarray(v, dtype=float).ravel() for v in (lower, upper, actual))
    keep = ~(np.isnan(l) | np.isnan(u) | np.isnan(y))
    if not keep.any():
        raise ValueError("no interval forecasts to score")
    s = interval_score(l[keep], u[keep], y[keep], alpha)
    return {"mean_interval_score": float(np.mean(s)), "max_interval_score": float(np.max(s))}


# ---------------------------------------------------------------------------
# plan and rolling origin


@dataclass(frozen=True)
class BacktestPlan:
    holdout: int = 30
    alpha: float = 0.2
    methods: tuple = BENCHMARK_METHODS
    intervals: bool = True
    n_paths: int = 200
    interval_engine: str = "simulation"
    gibbs: GibbsConfig | None = None
    seed: int = 0
    smoothing_alpha: str | float = "auto"
    monotone_from_age: float | None = 65.0
    infant_rule: str = "coale_demeny"

    def __post_init__(self):
        if self.holdout < 1:
            raise ValueError("holdout must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.interval_engine not in ("simulation", "gibbs"):
            raise ValueError("interval_engine must be 'simulation' or 'gibbs'")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")

    def validate(self, n: int) -> None:
        if self.holdout >= n:
            raise ValueError(f"holdout {self.holdout} must be shorter than the {n} years of data")

    def training_lengths(self, n: int) -> list[int]:
        self.validate(n)
        return list(range(n - self.holdout, n))

    def expected_count(self, h: int) -> int:
        return self.holdout + 1 - h


@dataclass
class BacktestResult:
    """Forecasts and actuals on the rate scale, indexed [origin, horizon, age]."""

    method: str
    populations: list
    origin_years: np.ndarray
    forecast: dict
    actual: dict
    lower: dict
    upper: dict
    e0_forecast: dict
    e0_actual: dict
    e0_lower: dict
    e0_upper: dict
    failures: list = field(default_factory=list)

    @property
    def H(self) -> int:
        return next(iter(self.forecast.values())).shape[1]

    def counts(self, pop) -> np.ndarray:
        """Forecasts available at each horizon (non-missing, with an actual)."""
        ok = ~np.isnan(self.forecast[pop][:, :, 0]) & ~np.isnan(self.actual[pop][:, :, 0])
        return ok.sum(axis=0)


def _stable_seed(*parts) -> int:
    return zlib.crc32("|".join(str(p) for p in parts).encode())


def _gibbs_paths(fit, group: PopulationGroup, H: int, B: int, config: GibbsConfig, seed: int):
    dec = fit.decomposition
    model = GibbsModel.from_decomposition(dec, {m: group.log_rates[m] for m in group.members})
    start = (dec.common.scores, {j: dec.specific[j].scores for j in dec.populations})
    draws = run_gibbs(model, config, start)
    return simulate_paths(model, draws, fit.score_model, H, seed=seed, max_paths=B).paths


def rolling_origin(dataset: MortalityDataset, plan: BacktestPlan, spec: MethodSpec,
                   group: PopulationGroup | None = None) -> BacktestResult:
    """Expanding-window forecasts of one method for every origin in the plan."""
    n = dataset.n
    lengths = plan.training_lengths(n)
    H = plan.holdout
    if group is None:
        surfaces = smooth_dataset(dataset, plan.smoothing_alpha, plan.monotone_from_age,
                                  cv_rows=slice(0, lengths[0]))
        group = group_from_dataset(dataset, surfaces)
    pops = list(group.members)
    p = dataset.grid.p
    O = len(lengths)
    nan3 = lambda: np.full((O, H, p), np.nan)  # noqa: E731
    nan2 = lambda: np.full((O, H), np.nan)  # noqa: E731
    res = BacktestResult(spec.label, pops, dataset.years[np.array(lengths) - 1],
                         {j: nan3() for j in pops}, {j: nan3() for j in pops},
                         {j: nan3() for j in pops}, {j: nan3() for j in pops},
                         {j: nan2() for j in pops}, {j: nan2() for j in pops},
                         {j: nan2() for j in pops}, {j: nan2() for j in pops})
    for j in pops:
        rates = dataset[j].rates
        for o, m in enumerate(lengths):
            k = min(H, n - m)
            res.actual[j][o, :k] = rates[m:m + k]
            res.e0_actual[j][o, :k] = life_expectancy(rates[m:m + k], dataset.grid,
                                                      plan.infant_rule)
    tail = plan.alpha / 2

    def one(o):
        m = lengths[o]
        sub = group.subset(m)
        fit = fit_method(spec, sub)
        point = fit.forecast(H)
        out = {"point": point}
        if plan.intervals:
            seed = _stable_seed(plan.seed, spec.label, m)
            if plan.interval_engine == "gibbs" and spec.kind == "multilevel_fdm":
                paths = _gibbs_paths(fit, sub, H, plan.n_paths, plan.gibbs or GibbsConfig(
                    total_draws=2000, burn_in=1000, thin=5, seed=seed), seed)
            else:
                paths = fit.simulate(H, plan.n_paths, np.random.Generator(np.random.Philox(seed)))
            out["paths"] = paths
        return out

    def guarded(o):
        try:
            return one(o)
        except Exception as exc:  # surfaced in the report as excluded forecasts
            return exc

    for o, r in enumerate(pmap(guarded, range(O))):
        if isinstance(r, Exception):
            res.failures.append((int(res.origin_years[o]), f"{type(r).__name__}: {r}"))
            continue
        for j in pops:
            rates = np.exp(r["point"][j])
            res.forecast[j][o] = rates
            res.e0_forecast[j][o] = life_expectancy(rates, dataset.grid, plan.infant_rule)
            if "paths" in r:
                pr = np.exp(r["paths"][j])
                res.lower[j][o] = np.quantile(pr, tail, axis=0)
                res.upper[j][o] = np.quantile(pr, 1 - tail, axis=0)
                e0 = life_expectancy(pr, dataset.grid, plan.infant_rule)
                res.e0_lower[j][o] = np.quantile(e0, tail, axis=0)
                res.e0_upper[j][o] = np.quantile(e0, 1 - tail, axis=0)
    return res


# ---------------------------------------------------------------------------
# report


@dataclass
class EvaluationReport:
    rows: list

    def to_csv(self, path_or_stream=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r["method"], r["population"], r["horizon"], r["metric"],
                        repr(float(r["value"])), r["n_forecasts"]])
        text = buf.getvalue()
        if path_or_stream is None:
            return text
        if hasattr(path_or_stream, "write"):
            path_or_stream.write(text)
        else:
            with open(path_or_stream, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def value(self, method, population, horizon, metric) -> float:
        for r in self.rows:
            if (r["method"], r["population"], str(r["horizon"]), r["metric"]) == \
                    (method, str(population), str(horizon), metric):
                return float(r["value"])
        raise KeyError((method, population, horizon, metric))

    @property
    def methods(self) -> list:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    @property
    def metrics(self) -> list:
        return list(dict.fromkeys(r["metric"] for r in self.rows))


def _horizon_rows(res: BacktestResult, pop, alpha) -> dict:
    """metric -> list over h of (value, count)."""
    out: dict = {}
    for h in range(res.H):
        f, a = res.forecast[pop][:, h], res.actual[pop][:, h]
        ok = ~np.isnan(f[:, 0]) & ~np.isnan(a[:, 0])
        cnt = int(ok.sum())
        vals: dict = {}
        if cnt:
            for pre, (fh, ah, lo, hi) in (
                    ("mortality_", (f[ok], a[ok], res.lower[pop][ok, h], res.upper[pop][ok, h])),
                    ("e0_", (res.e0_forecast[pop][ok, h], res.e0_actual[pop][ok, h],
                             res.e0_lower[pop][ok, h], res.e0_upper[pop][ok, h]))):
                for k, v in {**point_metrics(fh, ah), **max_metrics(fh, ah)}.items():
                    vals[pre + k] = v
                if not np.all(np.isnan(lo)):
                    for k, v in score_metrics(lo, hi, ah, alpha).items():
                        vals[pre + k] = v
        for k, v in vals.items():
            out.setdefault(k, [None] * res.H)[h] = (v, cnt)
        expected = int(len(res.origin_years) - h)
        out.setdefault("excluded_forecasts", [None] * res.H)[h] = (float(expected - cnt), cnt)
    return out


def _metric_order(name: str) -> tuple:
    order = ["MAFE", "RMSFE", "MFE", "mean_interval_score", "max_AFE", "max_RSFE",
             "max_interval_score"]
    for i, pre in enumerate(("mortality_", "e0_")):
        if name.startswith(pre):
            return (i, order.index(name[len(pre):]))
    return (9, 0)


def build_report(results: Iterable[BacktestResult], alpha: float = 0.2) -> EvaluationReport:
    """Per-horizon metrics plus unweighted and count-weighted horizon means.

    The ``mean`` population row averages the per-population metric values.
    """
    rows = []
    for res in results:
        per_pop = {str(j): _horizon_rows(res, j, alpha) for j in res.populations}
        if len(per_pop) > 1:
            keys = set.intersection(*(set(v) for v in per_pop.values()))
            avg = {}
            for k in keys:
                seq = []
                for h in range(res.H):
                    items = [per_pop[p][k][h] for p in per_pop if per_pop[p][k][h] is not None]
                    seq.append((float(np.mean([v for v, _ in items])),
                                int(min(c for _, c in items))) if items else None)
                avg[k] = seq
            per_pop["mean"] = avg
        for pop, metrics in per_pop.items():
            for metric in sorted(metrics, key=_metric_order):
                seq = metrics[metric]
                for h, item in enumerate(seq, start=1):
                    if item is not None:
                        rows.append({"method": res.method, "population": pop, "horizon": h,
                                     "metric": metric, "value": item[0], "n_forecasts": item[1]})
                have = [it for it in seq if it is not None]
                if not have:
                    continue
                total = sum(c for _, c in have)
                rows.append({"method": res.method, "population": pop, "horizon": "mean",
                             "metric": metric, "value": float(np.mean([v for v, _ in have])),
                             "n_forecasts": total})
                wmean = (sum(v * c for v, c in have) / total) if total else float("nan")
                rows.append({"method": res.method, "population": pop,
                             "horizon": "mean_weighted", "metric": metric, "value": wmean,
                             "n_forecasts": total})
    return EvaluationReport(rows)


def combine_reports(reports: Mapping[str, EvaluationReport]) -> EvaluationReport:
    """Average per-dataset metric values (not pooled errors) across datasets."""
    acc: dict = {}
    for rep in reports.values():
        for r in rep.rows:
            key = (r["method"], r["population"].split("/", 1)[-1], str(r["horizon"]), r["metric"])
            acc.setdefault(key, []).append((r["value"], r["n_forecasts"]))
    rows = [{"method": k[0], "population": k[1], "horizon": k[2], "metric": k[3],
             "value": float(np.mean([v for v, _ in vs])), "n_forecasts": sum(c for _, c in vs)}
            for k, vs in acc.items()]
    return EvaluationReport(rows)


def evaluate(dataset: MortalityDataset, plan: BacktestPlan = BacktestPlan(),
             methods: Iterable[MethodSpec] | None = None) -> tuple[EvaluationReport, list]:
    """Backtest every method on the same smoothed data; returns (report, results)."""
    methods = tuple(methods or plan.methods)
    lengths = plan.training_lengths(dataset.n)
    surfaces = smooth_dataset(dataset, plan.smoothing_alpha, plan.monotone_from_age,
                              cv_rows=slice(0, lengths[0]))
    group = group_from_dataset(dataset, surfaces)
    results = [rolling_origin(dataset, plan, spec, group) for spec in methods]
    return build_report(results, plan.alpha), results


__all__ = [
    "BacktestPlan", "BacktestResult", "EvaluationReport", "REPORT_COLUMNS", "build_report",
    "combine_reports", "evaluate", "interval_score", "max_metrics", "point_metrics",
    "rolling_origin", "score_metrics",
]
