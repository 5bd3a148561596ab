"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Errors are also reported as one JSON line on stderr. Every output
file is written to a temporary file first and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from .data import AgeGrid, DataError, PopulationLabel, load_dataset, read_canonical_csv, \
    write_canonical_csv
from .evaluate import BacktestPlan, evaluate
from .fpca import multilevel_decompose
from .lifetable import e0_distribution, life_expectancy
from .methods import BENCHMARK_METHODS, MethodError, MethodSpec, fit_method, group_from_dataset
from .smooth import SmoothingError, smooth_dataset
from .ts import TsFitError
from .uncertainty import GibbsConfig, GibbsModel, prediction_interval, run_gibbs, simulate_paths

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# io helpers

_UMASK = os.umask(0)
os.umask(_UMASK)


def atomic_write(path, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def load_config(path) -> dict:
    """Read a YAML or JSON run configuration and validate it against the schema."""
    import yaml

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        cfg = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    cfg = cfg or {}
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    import jsonschema

    schema = json.loads(resources.files("mlfdm").joinpath("schema/run_config.schema.json")
                        .read_text(encoding="utf-8"))
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    g = cfg.get("gibbs", {})
    if "total_draws" in g and "burn_in" in g and g["burn_in"] >= g["total_draws"]:
        raise ConfigError("gibbs.burn_in must be below gibbs.total_draws")


def _pairs(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"expected NAME=PATH, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def _hierarchy(args, cfg):
    spec = getattr(args, "hierarchy", None) or cfg.get("hierarchy")
    if isinstance(spec, str):
        from .data import load_hierarchy

        return load_hierarchy(spec)
    return spec


def _load_data(args, cfg):
    hier = _hierarchy(args, cfg)
    path = getattr(args, "input", None) or cfg.get("data", {}).get("canonical")
    if path:
        return read_canonical_csv(path, hier)
    data = cfg.get("data", {})
    if data.get("rates"):
        return load_dataset(data["rates"], data.get("exposures", {}), hier,
                            data.get("age_cap", 95))
    raise ConfigError("no input data: pass --input or set data in the config")


def _smoothing(cfg, args=None):
    sm = cfg.get("smoothing", {})
    alpha = getattr(args, "alpha", None) or sm.get("alpha", "auto")
    if alpha != "auto":
        try:
            alpha = float(alpha)
        except ValueError:
            raise ConfigError(f"alpha must be 'auto' or a number, got {alpha!r}") from None
    mono = sm.get("monotone_from_age", 65.0)
    if args is not None and getattr(args, "monotone_from", None) is not None:
        mono = None if args.monotone_from < 0 else args.monotone_from
    return alpha, mono


def _gibbs_config(cfg, args) -> tuple[GibbsConfig, dict]:
    g = dict(cfg.get("gibbs", {}))
    extra = {"refit": g.pop("refit", True), "score_noise": g.pop("score_noise", True)}
    for name, key in (("draws", "total_draws"), ("burn", "burn_in"), ("thin", "thin"),
                      ("chains", "chains")):
        v = getattr(args, name, None)
        if v is not None:
            g[key] = v
    g["seed"] = args.seed if getattr(args, "seed", None) is not None else cfg.get("seed", 0)
    if getattr(args, "fit_once", False):
        extra["refit"] = False
    if getattr(args, "no_score_noise", False):
        extra["score_noise"] = False
    try:
        return GibbsConfig(**g), extra
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _parse_age(label: str) -> float:
    return float(label.rstrip("+"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, cfg) -> int:
    rates = _pairs(args.rates) or cfg.get("data", {}).get("rates", {})
    expos = _pairs(args.exposures) or cfg.get("data", {}).get("exposures", {})
    if not rates:
        raise ConfigError("ingest needs at least one --rates NAME=PATH")
    cap = args.age_cap if args.age_cap is not None else cfg.get("data", {}).get("age_cap", 95)
    ds = load_dataset(rates, expos, _hierarchy(args, cfg), None if cap == 0 else cap)
    buf = io.StringIO()
    write_canonical_csv(ds, buf)
    atomic_write(args.out, buf.getvalue())
    n_flags = sum(len(v) for v in ds.flags.values())
    print(json.dumps({"populations": [lab.key for lab in ds.labels],
                      "years": [int(ds.years[0]), int(ds.years[-1])], "ages": ds.grid.p,
                      "flagged_cells": n_flags}))
    return EXIT_OK


def _smooth(ds, cfg, args=None):
    alpha, mono = _smoothing(cfg, args)
    return smooth_dataset(ds, alpha, mono)


def cmd_smooth(args, cfg) -> int:
    ds = _load_data(args, cfg)
    surfaces = _smooth(ds, cfg, args)
    labels = ds.grid.labels()
    rows = []
    for lab, s in surfaces.items():
        for t, year in enumerate(ds.years):
            for i, age in enumerate(labels):
                rows.append([lab.key, int(year), age, _num(s.f[t, i]), _num(s.delta2[t, i])])
    atomic_write(args.out, _csv_text(("population", "year", "age", "f", "delta2"), rows))
    print(json.dumps({"alpha": {lab.key: s.alpha for lab, s in surfaces.items()}}))
    return EXIT_OK


def _decompose(ds, cfg, args):
    group = group_from_dataset(ds, _smooth(ds, cfg, args))
    pops = {m: group.smoothed[m] for m in group.members}
    return group, multilevel_decompose(group.aggregate_surface(), pops, group.ages, args.P1,
                                       args.P2)


def cmd_fit(args, cfg) -> int:
    ds = _load_data(args, cfg)
    _, dec = _decompose(ds, cfg, args)
    out = Path(args.out_dir or cfg.get("output_dir", "out"))
    labels = ds.grid.labels()
    years = [int(y) for y in ds.years]
    systems = [("common", dec.common)] + [(m.key, dec.specific[m]) for m in dec.populations]

    atomic_write(out / "mean.csv", _csv_text(("age", "mean"), zip(labels, map(_num, dec.mu))))
    atomic_write(out / "eta.csv", _csv_text(
        ("population", "age", "eta"),
        [[m.key, a, _num(v)] for m in dec.populations for a, v in zip(labels, dec.eta[m])]))
    atomic_write(out / "eigenfunctions.csv", _csv_text(
        ("level", "component", "age", "value"),
        [[lvl, k + 1, labels[i], _num(E.eigenfunctions[k, i])]
         for lvl, E in systems for k in range(E.K) for i in range(len(labels))]))
    atomic_write(out / "scores.csv", _csv_text(
        ("level", "component", "year", "score"),
        [[lvl, k + 1, years[t], _num(E.scores[t, k])]
         for lvl, E in systems for k in range(E.K) for t in range(len(years))]))
    atomic_write(out / "eigenvalues.csv", _csv_text(
        ("level", "component", "eigenvalue", "retained"),
        [[lvl, k + 1, _num(v), int(k < E.K)]
         for lvl, E in systems for k, v in enumerate(E.all_eigenvalues)]))
    atomic_write(out / "sigma2.csv", _csv_text(
        ("population", "sigma2", "within_cluster_variability"),
        [[m.key, _num(dec.sigma2[m]), _num(dec.within_cluster(m))] for m in dec.populations]))
    share = dec.common.all_eigenvalues[0] / dec.common.total_variance \
        if dec.common.total_variance > 0 else 0.0
    print(json.dumps({"K": dec.K, "L": {m.key: dec.L(m) for m in dec.populations},
                      "first_component_share": float(share),
                      "within_cluster": {m.key: dec.within_cluster(m) for m in dec.populations}}))
    return EXIT_OK


def _method_specs(args, cfg) -> list[MethodSpec]:
    if getattr(args, "method", None):
        kinds = [args.method] if args.method != "all" else None
        if kinds is None:
            return list(BENCHMARK_METHODS)
        return [MethodSpec(args.method, args.score_model, args.P1, args.P2, args.horizon)]
    if cfg.get("methods"):
        return [MethodSpec(**m) for m in cfg["methods"]]
    return list(BENCHMARK_METHODS)


def _forecast_rows(spec, fc, labels, first_year):
    rows = []
    for pop, X in fc.items():
        for h in range(X.shape[0]):
            for i, age in enumerate(labels):
                rows.append([spec.label, str(pop), h + 1, age, _num(X[h, i])])
    return rows


def cmd_forecast(args, cfg) -> int:
    ds = _load_data(args, cfg)
    group = group_from_dataset(ds, _smooth(ds, cfg, args))
    rows, fcs = [], {}
    for spec in _method_specs(args, cfg):
        fc = fit_method(spec, group).forecast(args.horizon)
        fcs[spec.label] = fc
        rows += _forecast_rows(spec, fc, ds.grid.labels(), int(ds.years[-1]) + 1)
    atomic_write(args.out, _csv_text(("method", "population", "horizon", "age",
                                      "log_rate_forecast"), rows))
    if args.plot:
        _plot_forecasts(args.plot, fcs, ds, group)
    return EXIT_OK


def _simulate(ds, cfg, args, out_dir: Path) -> dict:
    group, dec = _decompose(ds, cfg, args)
    config, extra = _gibbs_config(cfg, args)
    model = GibbsModel.from_decomposition(dec, {m: group.log_rates[m] for m in group.members})
    start = (dec.common.scores, {j: dec.specific[j].scores for j in dec.populations})
    draws = run_gibbs(model, config, start)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        paths = simulate_paths(model, draws, args.score_model, args.horizon, seed=config.seed,
                               refit=extra["refit"], score_noise=extra["score_noise"],
                               max_paths=args.max_paths, ages=group.ages)
    rows = draws.summary()
    for j, acc in draws.acceptance.items():
        rows.append({"population": str(j), "parameter": "v_omega_acceptance", "mean": acc,
                     "sd": float("nan"), "q025": float("nan"), "q975": float("nan")})
    atomic_write(out_dir / "draws_summary.csv", _csv_text(
        ("population", "parameter", "mean", "sd", "q025", "q975"),
        [[r["population"], r["parameter"], _num(r["mean"]), _num(r["sd"]), _num(r["q025"]),
          _num(r["q975"])] for r in rows]))
    labels = ds.grid.labels()
    irows = []
    for j in paths.paths:
        P = paths[j]
        med = np.median(P, axis=0)
        lo80, hi80 = prediction_interval(P, 0.8)
        lo95, hi95 = prediction_interval(P, 0.95)
        for h in range(P.shape[1]):
            for i, age in enumerate(labels):
                irows.append([str(j), h + 1, age, _num(med[h, i]), _num(lo80[h, i]),
                              _num(hi80[h, i]), _num(lo95[h, i]), _num(hi95[h, i])])
    atomic_write(out_dir / "intervals.csv", _csv_text(
        ("population", "horizon", "age", "median", "lo80", "hi80", "lo95", "hi95"), irows))
    buf = io.BytesIO()
    np.savez_compressed(buf, populations=np.array([str(j) for j in paths.paths]),
                        ages=group.ages, open_ended=ds.grid.open_ended_last,
                        **{f"paths_{k}": paths[j] for k, j in enumerate(paths.paths)})
    atomic_write(out_dir / "paths.npz", buf.getvalue())
    point = {j: np.median(paths[j], axis=0) for j in paths.paths}
    _write_e0(out_dir / "e0.csv", point, {str(j): paths[j] for j in paths.paths}, ds.grid)
    return {"draws": draws.size, "paths": paths.B, "acceptance":
            {str(k): v for k, v in draws.acceptance.items()}}


def cmd_simulate(args, cfg) -> int:
    ds = _load_data(args, cfg)
    out_dir = Path(args.out_dir or cfg.get("output_dir", "out"))
    print(json.dumps(_simulate(ds, cfg, args, out_dir)))
    return EXIT_OK


def _write_e0(path, point: dict, paths: dict | None, grid: AgeGrid, infant_rule="coale_demeny"):
    rows = []
    for pop, X in point.items():
        e0 = life_expectancy(np.exp(X), grid, infant_rule)
        band = None
        if paths and str(pop) in paths:
            band = e0_distribution(paths[str(pop)], grid, (0.8, 0.95), infant_rule)
        for h in range(len(e0)):
            lims = ([band.lower[0.8][h], band.upper[0.8][h], band.lower[0.95][h],
                     band.upper[0.95][h]] if band else [math.nan] * 4)
            rows.append([str(pop), h + 1, _num(e0[h])] + [_num(v) for v in lims])
    atomic_write(path, _csv_text(("population", "horizon", "e0", "lo80", "hi80", "lo95", "hi95"),
                                 rows))


def read_forecast_csv(path, method: str | None = None):
    """Point forecasts by population from a ``forecast`` output file."""
    by_pop: dict = {}
    methods = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"method", "population", "horizon", "age", "log_rate_forecast"}
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            methods.add(row["method"])
            if method is not None and row["method"] != method:
                continue
            try:
                h, v = int(row["horizon"]), float(row["log_rate_forecast"])
            except ValueError:
                raise DataError(f"{path}:{line}: bad number") from None
            by_pop.setdefault(row["population"], {}).setdefault(h, {})[row["age"]] = v
    if method is None and len(methods) > 1:
        raise ConfigError(f"{path} holds several methods {sorted(methods)}; pick one with --method")
    if not by_pop:
        raise DataError(f"{path}: no forecasts found")
    out, labels = {}, None
    for pop, hs in by_pop.items():
        labels = list(next(iter(hs.values())))
        out[pop] = np.array([[hs[h][a] for a in labels] for h in sorted(hs)])
    grid = AgeGrid(np.array([_parse_age(a) for a in labels]), labels[-1].endswith("+"))
    return out, grid


def cmd_e0(args, cfg) -> int:
    point, grid = read_forecast_csv(args.input, args.method)
    paths = None
    if args.paths:
        with np.load(args.paths) as z:
            names = [str(s) for s in z["populations"]]
            paths = {nm: z[f"paths_{k}"] for k, nm in enumerate(names)}
    _write_e0(args.out, point, paths, grid, args.infant_rule)
    return EXIT_OK


def _plan(cfg, args) -> BacktestPlan:
    b = dict(cfg.get("backtest", {}))
    if getattr(args, "holdout", None) is not None:
        b["holdout"] = args.holdout
    if getattr(args, "n_paths", None) is not None:
        b["n_paths"] = args.n_paths
    alpha, mono = _smoothing(cfg)
    methods = tuple(MethodSpec(**m) for m in cfg["methods"]) if cfg.get("methods") \
        else BENCHMARK_METHODS
    gibbs = None
    if b.get("interval_engine") == "gibbs":
        gibbs, _ = _gibbs_config(cfg, argparse.Namespace(seed=cfg.get("seed", 0)))
    try:
        return BacktestPlan(methods=methods, seed=cfg.get("seed", 0), smoothing_alpha=alpha,
                            monotone_from_age=mono, gibbs=gibbs, **b)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_evaluate(args, cfg) -> int:
    if args.plan:
        cfg = {**cfg, **load_config(args.plan)}
    ds = _load_data(args, cfg)
    plan = _plan(cfg, args)
    if plan.holdout >= ds.n:
        raise ConfigError(f"holdout {plan.holdout} must be shorter than the {ds.n} years of data")
    report, results = evaluate(ds, plan)
    atomic_write(args.out, report.to_csv())
    failures = {r.method: len(r.failures) for r in results if r.failures}
    print(json.dumps({"methods": report.methods, "rows": len(report.rows),
                      "failed_origins": failures}))
    return EXIT_OK


def cmd_demo(args, cfg) -> int:
    from .synthetic import simulate_two_sex

    out = Path(args.out)
    ds = simulate_two_sex(n=args.years, seed=args.seed)
    buf = io.StringIO()
    write_canonical_csv(ds, buf)
    data_path = atomic_write(out / "data.csv", buf.getvalue())
    common = ["--input", str(data_path)]
    if args.alpha is not None:
        common += ["--alpha", str(args.alpha)]
    seed = ["--seed", str(args.seed)]
    steps = [
        ["smooth", *common, "--out", str(out / "smoothed.csv")],
        ["fit", *common, "--out-dir", str(out)],
        ["forecast", *common, "--method", "all", "--horizon", str(args.horizon), "--out",
         str(out / "forecasts.csv")] + (["--plot", str(out / "sex_ratios.png")]
                                        if args.plots else []),
        ["simulate", *common, *seed, "--draws", str(args.draws), "--burn", str(args.draws // 2),
         "--thin", str(args.thin), "--chains", "2", "--horizon", str(args.horizon),
         "--score-model", "arima", "--fit-once", "--out-dir", str(out)],
    ]
    for argv in steps:
        code = run(argv)
        if code:
            return code
    plan_cfg = {"backtest": {"holdout": args.holdout, "n_paths": args.n_paths}, "seed": args.seed}
    if args.alpha is not None:
        plan_cfg["smoothing"] = {"alpha": args.alpha}
    validate_config(plan_cfg)
    plan_path = atomic_write(out / "plan.json", json.dumps(plan_cfg, indent=2) + "\n")
    code = run(["evaluate", *common, "--plan", str(plan_path), "--out", str(out / "report.csv")])
    if code:
        return code
    _sex_ratio_csv(out / "forecasts.csv", out / "sex_ratios.csv")
    if args.plots:
        _plot_e0(out / "e0.csv", out / "e0_fan.png")
    return EXIT_OK


def _sex_ratio_csv(forecast_csv, out_path) -> None:
    """Long-format male/female mortality ratio forecasts for plotting."""
    rows, data = [], {}
    with open(forecast_csv, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            data[(r["method"], r["population"], int(r["horizon"]), r["age"])] = \
                float(r["log_rate_forecast"])
    for (method, pop, h, age), v in data.items():
        lab = PopulationLabel.parse(pop)
        if lab.sex != "male":
            continue
        fkey = (method, PopulationLabel(lab.name, "female", lab.region).key, h, age)
        if fkey in data:
            rows.append([method, h, age, _num(math.exp(v - data[fkey]))])
    atomic_write(out_path, _csv_text(("method", "horizon", "age", "sex_ratio"), rows))


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        warnings.warn("matplotlib not installed; skipping plots", stacklevel=2)
        return None
    return plt


def _save_fig(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, bbox_inches="tight")
    atomic_write(path, buf.getvalue())


def _plot_forecasts(path, fcs: dict, ds, group) -> None:
    plt = _pyplot()
    if plt is None:
        return
    try:
        fl, ml = group.sex_pair()
    except MethodError:
        return
    ages = ds.grid.ages
    fig, axes = plt.subplots(2, 3, figsize=(13, 7), sharey=True)
    for ax, (label, fc) in zip(axes.ravel(), fcs.items()):
        H = fc[fl].shape[0]
        cmap = plt.get_cmap("viridis")
        for h in range(H):
            ax.plot(ages, np.exp(fc[ml][h] - fc[fl][h]), color=cmap(h / max(H - 1, 1)), lw=0.8)
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("age")
    axes[0, 0].set_ylabel("male / female mortality")
    _save_fig(fig, path)
    plt.close(fig)


def _plot_e0(e0_csv, path) -> None:
    plt = _pyplot()
    if plt is None:
        return
    series: dict = {}
    with open(e0_csv, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            series.setdefault(r["population"], []).append(r)
    fig, ax = plt.subplots(figsize=(6, 4))
    for pop, rows in series.items():
        h = [int(r["horizon"]) for r in rows]
        get = lambda k: [float(r[k]) for r in rows]  # noqa: E731
        line, = ax.plot(h, get("e0"), label=pop)
        ax.fill_between(h, get("lo95"), get("hi95"), color=line.get_color(), alpha=0.15)
        ax.fill_between(h, get("lo80"), get("hi80"), color=line.get_color(), alpha=0.3)
    ax.set_xlabel("horizon")
    ax.set_ylabel("e(0)")
    ax.legend(fontsize=8)
    _save_fig(fig, path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlfdm", description="Multilevel functional data mortality forecasting")
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--threads", type=int, help="worker threads (sets MLFDM_THREADS)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--input", help="canonical CSV dataset")
        sp.add_argument("--hierarchy", help="YAML/JSON hierarchy spec")
        sp.add_argument("--alpha", help="smoothing penalty or 'auto'")
        sp.add_argument("--monotone-from", type=float, dest="monotone_from",
                        help="age from which fits are non-decreasing (negative disables)")

    def level_args(sp):
        sp.add_argument("--p1", "--P1", type=float, default=0.9, dest="P1",
                        help="variance share retained by the common components")
        sp.add_argument("--p2", "--P2", type=float, default=0.9, dest="P2",
                        help="variance share retained by each population's components")

    sp = sub.add_parser("ingest", help="parse HMD tables into the canonical CSV")
    sp.add_argument("--rates", action="append", metavar="NAME=PATH")
    sp.add_argument("--exposures", action="append", metavar="NAME=PATH")
    sp.add_argument("--hierarchy")
    sp.add_argument("--age-cap", type=int, dest="age_cap")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("smooth", help="smooth log rates")
    data_args(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("fit", help="multilevel decomposition summary")
    data_args(sp)
    level_args(sp)
    sp.add_argument("--method", default="multilevel", choices=["multilevel"])
    sp.add_argument("--out-dir", dest="out_dir", help="directory for the decomposition CSVs")

    sp = sub.add_parser("forecast", help="point forecasts")
    data_args(sp)
    level_args(sp)
    sp.add_argument("--method", default="multilevel_fdm",
                    choices=["lee_carter", "li_lee", "independent_fdm", "product_ratio",
                             "multilevel_fdm", "hierarchical_fdm", "all"])
    sp.add_argument("--score-model", default="arima", dest="score_model",
                    choices=["arima", "rwf", "auto_arima", "rwd"])
    sp.add_argument("--horizon", type=int, default=30)
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot", help="PNG of forecast sex ratios")

    sp = sub.add_parser("simulate", help="posterior sampling and sample paths")
    data_args(sp)
    level_args(sp)
    sp.add_argument("--draws", type=int)
    sp.add_argument("--burn", type=int)
    sp.add_argument("--thin", type=int)
    sp.add_argument("--chains", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--horizon", type=int, default=30)
    sp.add_argument("--score-model", default="arima", dest="score_model",
                    choices=["arima", "rwf", "auto_arima", "rwd"])
    sp.add_argument("--fit-once", action="store_true", dest="fit_once",
                    help="fit score models once and re-apply them to every draw")
    sp.add_argument("--no-score-noise", action="store_true", dest="no_score_noise",
                    help="use point forecasts of the scores for every draw")
    sp.add_argument("--max-paths", type=int, dest="max_paths")
    sp.add_argument("--out-dir", dest="out_dir")

    sp = sub.add_parser("e0", help="life expectancy from forecasts")
    sp.add_argument("--input", required=True, help="forecast CSV")
    sp.add_argument("--paths", help="paths.npz from simulate, for intervals")
    sp.add_argument("--method")
    sp.add_argument("--infant-rule", default="coale_demeny", dest="infant_rule",
                    choices=["coale_demeny", "half"])
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("evaluate", help="rolling-origin backtest report")
    data_args(sp)
    sp.add_argument("--plan", help="config with backtest settings")
    sp.add_argument("--holdout", type=int)
    sp.add_argument("--n-paths", type=int, dest="n_paths")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("demo", help="synthetic two-sex data through the whole pipeline")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out", default="out")
    sp.add_argument("--years", type=int, default=60)
    sp.add_argument("--horizon", type=int, default=30)
    sp.add_argument("--holdout", type=int, default=10)
    sp.add_argument("--n-paths", type=int, default=100, dest="n_paths")
    sp.add_argument("--draws", type=int, default=2000)
    sp.add_argument("--thin", type=int, default=5)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--plots", action="store_true")
    return p


COMMANDS = {"ingest": cmd_ingest, "smooth": cmd_smooth, "fit": cmd_fit, "forecast": cmd_forecast,
            "simulate": cmd_simulate, "e0": cmd_e0, "evaluate": cmd_evaluate, "demo": cmd_demo}


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
          file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(exc, EXIT_CONFIG)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.threads is not None:
        os.environ["MLFDM_THREADS"] = str(max(1, args.threads))
    try:
        cfg = load_config(args.config) if args.config else {}
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, MethodError) as exc:
        return _fail(exc, EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_NUMERIC)
    except (DataError, FileNotFoundError, UnicodeDecodeError) as exc:
        return _fail(exc, EXIT_DATA)
    except (SmoothingError, TsFitError, np.linalg.LinAlgError, FloatingPointError,
            ArithmeticError) as exc:
        return _fail(exc, EXIT_NUMERIC)
    except ValueError as exc:
        return _fail(exc, EXIT_CONFIG)


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
