"""Point-forecast methods for groups of populations.

Every fitted method exposes ``forecast(H)`` (log-rate point forecasts per
population, H x p) and ``simulate(H, B, rng)`` (sample paths, B x H x p).
Sample paths combine simulated score paths with Gaussian age-specific noise
whose variance is the in-sample residual variance of observed log rates
around the method's fitted values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._parallel import pmap
from .data import HierarchyNode, MortalityDataset, PopulationLabel, StructureError
from .fpca import (EigenSystem, empirical_fpca, multilevel_decompose, roundoff_floor,
                   trapezoid_weights)
from .ts import TsFitError, TsModel, fit_ar1, fit_arfima, fit_score_model

METHOD_KINDS = ("lee_carter", "li_lee", "independent_fdm", "product_ratio", "multilevel_fdm",
                "hierarchical_fdm")
SCORE_KINDS = {"auto_arima": "auto_arima", "arima": "auto_arima", "rwd": "rwd", "rwf": "rwd"}


class MethodError(ValueError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    score_model: str = "auto_arima"
    P1: float = 0.9
    P2: float = 0.9
    horizon: int = 30

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise MethodError(f"unknown method {self.kind!r}; expected one of {METHOD_KINDS}")
        if self.score_model not in SCORE_KINDS:
            raise MethodError(f"unknown score model {self.score_model!r}")
        object.__setattr__(self, "score_model", SCORE_KINDS[self.score_model])
        if self.horizon < 1:
            raise MethodError("horizon must be at least 1")

    @property
    def label(self) -> str:
        names = {"lee_carter": "Lee-Carter", "li_lee": "Li-Lee",
                 "independent_fdm": "Independent FDM", "product_ratio": "Product-ratio"}
        if self.kind in names:
            return names[self.kind]
        suffix = "arima" if self.score_model == "auto_arima" else "rwf"
        base = "Multilevel FDM" if self.kind == "multilevel_fdm" else "Hierarchical FDM"
        return f"{base} ({suffix})"


BENCHMARK_METHODS = (
    MethodSpec("lee_carter"),
    MethodSpec("li_lee"),
    MethodSpec("independent_fdm"),
    MethodSpec("product_ratio"),
    MethodSpec("multilevel_fdm", "auto_arima"),
    MethodSpec("multilevel_fdm", "rwd"),
)


@dataclass(frozen=True)
class ForecastSurface:
    population: PopulationLabel | str
    log_rates: np.ndarray
    method: str
    first_year: int | None = None

    def __post_init__(self):
        x = np.asarray(self.log_rates, dtype=float)
        if x.ndim != 2:
            raise MethodError("forecast surface must be H x p")
        if not np.all(np.isfinite(x)):
            raise MethodError(f"{self.method}: non-finite forecast for {self.population}")
        object.__setattr__(self, "log_rates", x)

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(1, self.log_rates.shape[0] + 1)


# ---------------------------------------------------------------------------
# score helpers


def _fit_scores(scores: np.ndarray, kind: str) -> list[TsModel]:
    return pmap(lambda k: fit_score_model(scores[:, k], kind), range(scores.shape[1]))


def _score_means(models, H) -> np.ndarray:
    if not models:
        return np.zeros((H, 0))
    return np.column_stack([m.forecast(H).mean for m in models])


def _score_paths(models, H, B, rng) -> np.ndarray:
    if not models:
        return np.zeros((B, H, 0))
    return np.stack([m.simulate(H, rng, size=B) for m in models], axis=-1)


def _noise(resid_var: np.ndarray, H: int, B: int, rng) -> np.ndarray:
    return rng.standard_normal((B, H, len(resid_var))) * np.sqrt(resid_var)


def _resid_var(observed, fitted) -> np.ndarray:
    return np.var(np.asarray(observed) - np.asarray(fitted), axis=0)


def _orient_vector(v: np.ndarray, s: np.ndarray):
    if v.size and v[np.argmax(np.abs(v))] < 0:
        return -v, -s
    return v, s


# ---------------------------------------------------------------------------
# Lee-Carter


@dataclass
class LeeCarter:
    a: np.ndarray
    b: np.ndarray
    k: np.ndarray
    k_model: TsModel
    resid_var: np.ndarray

    def fitted(self) -> np.ndarray:
        return self.a + np.outer(self.k, self.b)

    def forecast(self, H: int) -> np.ndarray:
        return self.a + np.outer(self.k_model.forecast(H).mean, self.b)

    def simulate(self, H: int, B: int, rng) -> np.ndarray:
        kp = self.k_model.simulate(H, rng, size=B)
        return self.a + kp[:, :, None] * self.b + _noise(self.resid_var, H, B, rng)


def _first_pair(X: np.ndarray):
    """Leading singular pair normalised so the age loadings sum to one."""
    if not np.any(X):
        raise MethodError("degenerate (zero-variance) matrix: age loadings undefined")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    b = Vt[0]
    k = U[:, 0] * s[0]
    total = b.sum()
    if abs(total) < 1e-12 * np.abs(b).sum():
        raise MethodError("age loadings sum to zero; cannot normalise")
    return b / total, k * total


def fit_lee_carter(log_rates, score_model: str = "rwd") -> LeeCarter:
    y = np.asarray(log_rates, dtype=float)
    if y.ndim != 2 or y.shape[0] < 3:
        raise MethodError("Lee-Carter needs an n x p matrix with n >= 3")
    a = y.mean(axis=0)
    X = y - a
    # a constant surface leaves only round-off after centring
    if np.max(np.abs(X)) <= 1e-13 * max(1.0, np.max(np.abs(y))):
        b = np.full(y.shape[1], 1.0 / y.shape[1])
        k = np.zeros(y.shape[0])
    else:
        b, k = _first_pair(X)
        k = k - k.mean()
    model = fit_score_model(k, score_model)
    lc = LeeCarter(a, b, k, model, np.zeros(y.shape[1]))
    lc.resid_var = _resid_var(y, lc.fitted())
    return lc


# ---------------------------------------------------------------------------
# Li-Lee augmented common factor


@dataclass
class LiLee:
    common: LeeCarter
    offsets: dict
    psi: dict
    gamma: dict
    gamma_models: dict
    resid_var: dict

    @property
    def populations(self) -> list:
        return list(self.offsets)

    def _common_part(self, kpath):
        return kpath[..., None] * self.common.b

    def fitted(self, pop) -> np.ndarray:
        return (self.offsets[pop] + self._common_part(self.common.k)
                + np.outer(self.gamma[pop], self.psi[pop]))

    def forecast(self, H: int) -> dict:
        kf = self.common.k_model.forecast(H).mean
        out = {}
        for pop in self.populations:
            gf = self.gamma_models[pop].forecast(H).mean
            out[pop] = self.offsets[pop] + self._common_part(kf) + np.outer(gf, self.psi[pop])
        return out

    def simulate(self, H: int, B: int, rng) -> dict:
        kp = self.common.k_model.simulate(H, rng, size=B)
        out = {}
        for pop in self.populations:
            gp = self.gamma_models[pop].simulate(H, rng, size=B)
            out[pop] = (self.offsets[pop] + self._common_part(kp) + gp[:, :, None] * self.psi[pop]
                        + _noise(self.resid_var[pop], H, B, rng))
        return out


def fit_li_lee(total, populations: Mapping) -> LiLee:
    """Common Lee-Carter factor from the aggregate plus one AR(1) factor per population."""
    if len(populations) < 2:
        raise MethodError("Li-Lee needs at least two populations")
    common = fit_lee_carter(total, "rwd")
    offsets, psi, gamma, models = {}, {}, {}, {}
    for pop, y in populations.items():
        y = np.asarray(y, dtype=float)
        if y.shape != np.shape(total):
            raise MethodError(f"population {pop} does not match the aggregate's shape")
        offsets[pop] = y.mean(axis=0)
        R = y - offsets[pop] - np.outer(common.k, common.b)
        if np.max(np.abs(R)) <= 1e-10 * max(1.0, np.max(np.abs(y))):
            v = np.zeros(y.shape[1])
            g = np.zeros(y.shape[0])
        else:
            U, s, Vt = np.linalg.svd(R, full_matrices=False)
            v, g = _orient_vector(Vt[0], U[:, 0] * s[0])
        psi[pop], gamma[pop] = v, g
        models[pop] = fit_ar1(g)
    fit = LiLee(common, offsets, psi, gamma, models, {})
    fit.resid_var = {pop: _resid_var(populations[pop], fit.fitted(pop)) for pop in populations}
    return fit


# ---------------------------------------------------------------------------
# functional data models


@dataclass
class FunctionalModel:
    """Mean curve plus FPCA scores forecast by univariate models."""

    mean: np.ndarray
    basis: EigenSystem
    models: list
    resid_var: np.ndarray

    def fitted(self) -> np.ndarray:
        return self.mean + self.basis.reconstruct()

    def forecast(self, H: int) -> np.ndarray:
        return self.mean + _score_means(self.models, H) @ self.basis.eigenfunctions

    def simulate(self, H: int, B: int, rng, noise: bool = True) -> np.ndarray:
        out = self.mean + _score_paths(self.models, H, B, rng) @ self.basis.eigenfunctions
        if noise:
            out = out + _noise(self.resid_var, H, B, rng)
        return out


def _fit_functional(surface, ages, threshold, score_model, observed=None) -> FunctionalModel:
    f = np.asarray(surface, dtype=float)
    mean = f.mean(axis=0)
    basis = empirical_fpca(f - mean, threshold, ages=ages,
                           zero_floor=roundoff_floor(f, trapezoid_weights(ages)))
    if score_model == "arfima":
        models = pmap(lambda k: _fit_arfima_or_arima(basis.scores[:, k]), range(basis.K))
    else:
        models = _fit_scores(basis.scores, score_model)
    fm = FunctionalModel(mean, basis, models, np.zeros(f.shape[1]))
    fm.resid_var = _resid_var(f if observed is None else observed, fm.fitted())
    return fm


def _fit_arfima_or_arima(series) -> TsModel:
    try:
        return fit_arfima(series)
    except (TsFitError, ValueError):
        m = fit_score_model(series, "auto_arima")
        m.flags = m.flags + ("arfima_unavailable",)
        return m


def fit_independent_fdm(surface, ages, threshold: float = 0.9, score_model: str = "auto_arima",
                        observed=None) -> FunctionalModel:
    """Single-population functional model; ``observed`` are raw log rates for the noise term."""
    return _fit_functional(surface, ages, threshold, SCORE_KINDS.get(score_model, score_model),
                           observed)


@dataclass
class ProductRatio:
    female: object
    male: object
    product: FunctionalModel
    ratio: FunctionalModel
    resid_var: dict

    def forecast(self, H: int) -> dict:
        p, r = self.product.forecast(H), self.ratio.forecast(H)
        return {self.female: p + r, self.male: p - r}

    def simulate(self, H: int, B: int, rng) -> dict:
        p = self.product.simulate(H, B, rng, noise=False)
        r = self.ratio.simulate(H, B, rng, noise=False)
        return {self.female: p + r + _noise(self.resid_var[self.female], H, B, rng),
                self.male: p - r + _noise(self.resid_var[self.male], H, B, rng)}


def product_ratio_transform(female, male):
    f, m = np.asarray(female, dtype=float), np.asarray(male, dtype=float)
    return (f + m) / 2, (f - m) / 2


def fit_product_ratio(female_surface, male_surface, ages, threshold: float = 0.9,
                      labels=("female", "male"), observed: Mapping | None = None) -> ProductRatio:
    """Half-sum and half-difference of log rates; ratio scores use ARFIMA."""
    if np.shape(female_surface) != np.shape(male_surface):
        raise MethodError("female and male surfaces must share grid and years")
    prod, ratio = product_ratio_transform(female_surface, male_surface)
    pm = _fit_functional(prod, ages, threshold, "auto_arima")
    rm = _fit_functional(ratio, ages, threshold, "arfima")
    fl, ml = labels
    fit = ProductRatio(fl, ml, pm, rm, {})
    obs = observed or {fl: female_surface, ml: male_surface}
    pf, rf = pm.fitted(), rm.fitted()
    fit.resid_var = {fl: _resid_var(obs[fl], pf + rf), ml: _resid_var(obs[ml], pf - rf)}
    return fit


# ---------------------------------------------------------------------------
# multilevel


@dataclass
class MultilevelFit:
    decomposition: object
    score_model: str
    common_models: list
    specific_models: dict
    resid_var: dict

    @property
    def populations(self) -> list:
        return self.decomposition.populations

    def _combine(self, pop, beta, gamma) -> np.ndarray:
        d = self.decomposition
        return (d.mu + d.eta[pop] + beta @ d.common.eigenfunctions
                + gamma @ d.specific[pop].eigenfunctions)

    def forecast(self, H: int) -> dict:
        beta = _score_means(self.common_models, H)
        return {pop: self._combine(pop, beta, _score_means(self.specific_models[pop], H))
                for pop in self.populations}

    def simulate(self, H: int, B: int, rng) -> dict:
        beta = _score_paths(self.common_models, H, B, rng)
        out = {}
        for pop in self.populations:
            gamma = _score_paths(self.specific_models[pop], H, B, rng)
            out[pop] = self._combine(pop, beta, gamma) + _noise(self.resid_var[pop], H, B, rng)
        return out


def fit_multilevel(decomposition, score_model: str = "auto_arima",
                   observed: Mapping | None = None) -> MultilevelFit:
    kind = SCORE_KINDS.get(score_model, score_model)
    d = decomposition
    common = _fit_scores(d.common.scores, kind)
    specific = {pop: _fit_scores(d.specific[pop].scores, kind) for pop in d.populations}
    fit = MultilevelFit(d, kind, common, specific, {})
    for pop in d.populations:
        obs = d.fitted(pop) + d.residuals[pop] if observed is None else observed[pop]
        fit.resid_var[pop] = _resid_var(obs, d.fitted(pop))
    return fit


def multilevel_point_forecast(decomposition, score_model: str = "auto_arima", H: int = 30) -> dict:
    """Point forecasts of every population's log rates from a fitted decomposition."""
    return fit_multilevel(decomposition, score_model).forecast(H)


# ---------------------------------------------------------------------------
# two-level hierarchy (sex within region)


@dataclass
class HierarchicalFit:
    means: dict
    region_of: dict
    sex_of: dict
    R: dict
    U: dict
    S: dict
    W: dict
    resid_var: dict

    @property
    def populations(self) -> list:
        return list(self.means)

    def forecast(self, H: int) -> dict:
        R = {s: m.forecast(H) - m.mean for s, m in self.R.items()}
        S = {j: m.forecast(H) - m.mean for j, m in self.S.items()}
        out = {}
        for pop in self.populations:
            s, j = self.region_of[pop], self.sex_of[pop]
            U = self.U[pop].forecast(H) - self.U[pop].mean
            W = self.W[pop].forecast(H) - self.W[pop].mean
            out[pop] = self.means[pop] + (R[s] + U + S[j] + W) / 2
        return out

    def simulate(self, H: int, B: int, rng) -> dict:
        R = {s: m.simulate(H, B, rng, noise=False) - m.mean for s, m in self.R.items()}
        S = {j: m.simulate(H, B, rng, noise=False) - m.mean for j, m in self.S.items()}
        out = {}
        for pop in self.populations:
            s, j = self.region_of[pop], self.sex_of[pop]
            U = self.U[pop].simulate(H, B, rng, noise=False) - self.U[pop].mean
            W = self.W[pop].simulate(H, B, rng, noise=False) - self.W[pop].mean
            out[pop] = (self.means[pop] + (R[s] + U + S[j] + W) / 2
                        + _noise(self.resid_var[pop], H, B, rng))
        return out

    def fitted(self, pop) -> np.ndarray:
        s, j = self.region_of[pop], self.sex_of[pop]
        parts = [self.R[s].basis.reconstruct(), self.U[pop].basis.reconstruct(),
                 self.S[j].basis.reconstruct(), self.W[pop].basis.reconstruct()]
        return self.means[pop] + sum(parts) / 2


def hierarchical_multilevel(surfaces: Mapping, hierarchy: HierarchyNode, ages,
                            score_model: str = "auto_arima", P1: float = 0.9, P2: float = 0.9,
                            observed: Mapping | None = None) -> HierarchicalFit:
    """Average of a within-region and a within-sex multilevel decomposition.

    ``hierarchy`` must have regions as children, each with sex-specific leaf
    populations. A region's common trend uses the region's own series when
    present, else the average of its leaves; a sex's common trend uses the
    average of that sex across regions.
    """
    kind = SCORE_KINDS.get(score_model, score_model)
    if hierarchy.depth() != 2 or any(c.is_leaf for c in hierarchy.children):
        raise StructureError("hierarchical method needs a two-level hierarchy (region -> sex)")
    f = {k: np.asarray(v, dtype=float) for k, v in surfaces.items()}
    region_of, sex_of, region_series = {}, {}, {}
    for region in hierarchy.children:
        if any(not leaf.is_leaf or leaf.label is None for leaf in region.children):
            raise StructureError(f"region {region.name} must have population leaves only")
        leaves = [leaf.label for leaf in region.children]
        for lab in leaves:
            region_of[lab] = region.name
            sex_of[lab] = lab.sex
        if region.label is not None and region.label in f:
            region_series[region.name] = f[region.label]
        else:
            region_series[region.name] = np.mean([f[lab] for lab in leaves], axis=0)
    sexes = sorted(set(sex_of.values()))
    sex_series = {j: np.mean([f[lab] for lab in sex_of if sex_of[lab] == j], axis=0)
                  for j in sexes}

    R = {s: _fit_functional(v, ages, P1, kind) for s, v in region_series.items()}
    S = {j: _fit_functional(v, ages, P1, kind) for j, v in sex_series.items()}
    means, U, W = {}, {}, {}
    for lab in region_of:
        means[lab] = f[lab].mean(axis=0)
        base = f[lab] - means[lab]
        U[lab] = _fit_centered(base - R[region_of[lab]].basis.reconstruct(), ages, P2, kind,
                               f[lab])
        W[lab] = _fit_centered(base - S[sex_of[lab]].basis.reconstruct(), ages, P2, kind,
                               f[lab])
    fit = HierarchicalFit(means, region_of, sex_of, R, U, S, W, {})
    for lab in region_of:
        obs = f[lab] if observed is None else observed[lab]
        fit.resid_var[lab] = _resid_var(obs, fit.fitted(lab))
    return fit


def _fit_centered(residual, ages, threshold, kind, source=None) -> FunctionalModel:
    # residual layers are centred by construction; keep the zero mean explicit
    floor = roundoff_floor(residual if source is None else source, trapezoid_weights(ages))
    basis = empirical_fpca(residual, threshold, ages=ages, zero_floor=floor)
    models = _fit_scores(basis.scores, kind)
    return FunctionalModel(np.zeros(residual.shape[1]), basis, models, np.zeros(residual.shape[1]))


# ---------------------------------------------------------------------------
# dispatch on a group of populations


@dataclass(frozen=True)
class PopulationGroup:
    """An aggregate with its member populations, raw and smoothed log rates (n x p)."""

    ages: np.ndarray
    members: tuple
    aggregate: object = None
    log_rates: Mapping = field(default_factory=dict)
    smoothed: Mapping = field(default_factory=dict)
    hierarchy: HierarchyNode | None = None

    def aggregate_surface(self, smoothed: bool = True) -> np.ndarray:
        src = self.smoothed if smoothed else self.log_rates
        if self.aggregate is not None and self.aggregate in src:
            return np.asarray(src[self.aggregate], dtype=float)
        return np.mean([src[m] for m in self.members], axis=0)

    def sex_pair(self):
        by_sex = {m.sex: m for m in self.members if isinstance(m, PopulationLabel)}
        if len(self.members) != 2 or set(by_sex) != {"female", "male"}:
            raise MethodError("product-ratio needs exactly one female and one male population")
        return by_sex["female"], by_sex["male"]

    def subset(self, stop: int) -> "PopulationGroup":
        """First ``stop`` years."""
        return PopulationGroup(self.ages, self.members, self.aggregate,
                               {k: np.asarray(v)[:stop] for k, v in self.log_rates.items()},
                               {k: np.asarray(v)[:stop] for k, v in self.smoothed.items()},
                               self.hierarchy)


def group_from_dataset(dataset: MortalityDataset, surfaces: Mapping | None = None,
                       node: HierarchyNode | None = None) -> PopulationGroup:
    """Group the leaves under ``node`` (default: the dataset's hierarchy root)."""
    node = node or dataset.hierarchy
    members = tuple(leaf.label for leaf in node.leaves() if leaf.label is not None)
    if not members:
        raise StructureError(f"hierarchy node {node.name} has no populations")
    labels = list(members) + ([node.label] if node.label is not None else [])
    raw = {lab: dataset.log_rates(lab) for lab in labels}
    smooth = {lab: np.asarray(surfaces[lab].f if hasattr(surfaces[lab], "f") else surfaces[lab])
              for lab in labels} if surfaces else {}
    return PopulationGroup(dataset.grid.ages.astype(float), members, node.label, raw, smooth, node)


def fit_method(spec: MethodSpec, group: PopulationGroup):
    """Fit one method to a group; the result has ``forecast`` and ``simulate``."""
    ages = group.ages
    sm = group.smoothed or group.log_rates
    kind = spec.kind
    if kind == "lee_carter":
        return _PerPopulation({m: fit_lee_carter(group.log_rates[m]) for m in group.members})
    if kind == "li_lee":
        pops = {m: group.log_rates[m] for m in group.members}
        return fit_li_lee(group.aggregate_surface(smoothed=False), pops)
    if kind == "independent_fdm":
        return _PerPopulation({m: fit_independent_fdm(sm[m], ages, spec.P1, "auto_arima",
                                                      observed=group.log_rates.get(m))
                               for m in group.members})
    if kind == "product_ratio":
        fl, ml = group.sex_pair()
        obs = {fl: group.log_rates.get(fl, sm[fl]), ml: group.log_rates.get(ml, sm[ml])}
        return fit_product_ratio(sm[fl], sm[ml], ages, spec.P1, (fl, ml), obs)
    if kind == "multilevel_fdm":
        pops = {m: sm[m] for m in group.members}
        dec = multilevel_decompose(group.aggregate_surface(), pops, ages, spec.P1, spec.P2)
        obs = {m: group.log_rates.get(m, sm[m]) for m in group.members}
        return fit_multilevel(dec, spec.score_model, obs)
    if kind == "hierarchical_fdm":
        if group.hierarchy is None:
            raise MethodError("hierarchical method needs the group's hierarchy")
        obs = {m: group.log_rates.get(m, sm[m]) for m in group.members}
        return hierarchical_multilevel(sm, group.hierarchy, ages, spec.score_model, spec.P1,
                                       spec.P2, obs)
    raise MethodError(f"unknown method {kind!r}")  # pragma: no cover


@dataclass
class _PerPopulation:
    fits: dict

    def forecast(self, H: int) -> dict:
        return {k: f.forecast(H) for k, f in self.fits.items()}

    def simulate(self, H: int, B: int, rng) -> dict:
        return {k: f.simulate(H, B, rng) for k, f in self.fits.items()}


def run_method(spec: MethodSpec, group: PopulationGroup, H: int | None = None,
               first_year: int | None = None) -> dict:
    """Point forecasts as ``ForecastSurface`` objects keyed by population."""
    H = spec.horizon if H is None else H
    fc = fit_method(spec, group).forecast(H)
    return {pop: ForecastSurface(pop, v, spec.label, first_year) for pop, v in fc.items()}


__all__ = [
    "BENCHMARK_METHODS", "ForecastSurface", "FunctionalModel", "HierarchicalFit", "LeeCarter",
    "LiLee", "METHOD_KINDS", "MethodError", "MethodSpec", "MultilevelFit", "PopulationGroup",
    "ProductRatio", "fit_independent_fdm", "fit_lee_carter", "fit_li_lee", "fit_method",
    "fit_multilevel", "fit_product_ratio", "group_from_dataset", "hierarchical_multilevel",
    "multilevel_point_forecast", "product_ratio_transform", "run_method",
]
