"""Posterior sampling of scores and variances, and simulated future sample paths.

The sampler conditions on the fitted eigenfunctions and eigenvalues of a
multilevel decomposition and treats the smoothed surfaces as data:

    f^j_t = mu + eta^j + sum_k beta_{t,k} phi_k + sum_l gamma^j_{t,l} psi^j_l + e^j_t
    y^j_t(x_i) = f^j_t(x_i) + N(0, 1 / omega^j_i)

with beta_{t,k} ~ N(0, lambda_k), gamma^j_{t,l} ~ N(0, lambda^j_l),
e ~ N(0, sigma^2) and 1 / sigma^2 ~ Gamma(alpha1, alpha2) (shape, rate).
The precisions omega_i follow the heteroscedastic regression of Koop (2003),
with Gamma densities written as f_G(mean, degrees of freedom), i.e.
shape = dof / 2 and rate = dof / (2 mean).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from ._parallel import pmap
from .ts import fit_score_model

MIN_PATHS = 100
OMEGA_FORMS = ("conjugate", "displayed")


@dataclass(frozen=True)
class GibbsConfig:
    total_draws: int = 20000
    burn_in: int = 10000
    thin: int = 10
    chains: int = 1
    seed: int = 0
    alpha1: float = 1e-3
    alpha2: float = 1e-3
    v_init: float = 1.0
    v_prior_mean: float = 1.0
    omega_form: str = "conjugate"
    pooled_sigma: bool = True
    target_accept: float = 0.3

    def __post_init__(self):
        if not 0 <= self.burn_in < self.total_draws:
            raise ValueError("burn_in must be non-negative and below total_draws")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        if self.alpha1 <= 0 or self.alpha2 <= 0 or self.v_init <= 0 or self.v_prior_mean <= 0:
            raise ValueError("prior parameters must be positive")
        if self.omega_form not in OMEGA_FORMS:
            raise ValueError(f"omega_form must be one of {OMEGA_FORMS}")

    @property
    def retained_per_chain(self) -> int:
        return len(range(self.burn_in, self.total_draws, self.thin))


@dataclass(frozen=True)
class GibbsModel:
    """Fixed quantities of the sampler, one entry per population in dicts."""

    mu: np.ndarray
    eta: dict
    phi: np.ndarray
    lam: np.ndarray
    psi: dict
    lam_specific: dict
    f: dict
    smooth_ss: dict
    n_obs: int

    @property
    def populations(self) -> list:
        return list(self.f)

    @property
    def n(self) -> int:
        return next(iter(self.f.values())).shape[0]

    @property
    def p(self) -> int:
        return len(self.mu)

    @property
    def J(self) -> int:
        return len(self.f)

    def has_smoothing(self, j) -> bool:
        """False when no raw data were given, so smoothing error is absent (omega = inf)."""
        return bool(np.any(self.smooth_ss[j] > 0))

    @classmethod
    def from_decomposition(cls, decomposition, observed: dict | None = None) -> "GibbsModel":
        """``observed`` maps populations to raw log rates; without it the smoothing layer is inert."""
        d = decomposition
        f = {j: d.fitted(j) + d.residuals[j] for j in d.populations}
        ss = {}
        for j in d.populations:
            if observed is None:
                ss[j] = np.zeros(len(d.mu))
            else:
                y = np.asarray(observed[j], dtype=float)
                if y.shape != f[j].shape:
                    raise ValueError(f"observed log rates for {j} do not match the surface")
                ss[j] = np.sum((y - f[j]) ** 2, axis=0)
        return cls(d.mu, dict(d.eta), d.common.eigenfunctions, d.common.eigenvalues,
                   {j: d.specific[j].eigenfunctions for j in d.populations},
                   {j: d.specific[j].eigenvalues for j in d.populations}, f, ss,
                   next(iter(f.values())).shape[0])


@dataclass
class GibbsState:
    model: GibbsModel
    beta: np.ndarray
    gamma: dict
    sigma2: dict
    omega: dict
    v_omega: dict
    rng: np.random.Generator
    step: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)
    proposed: dict = field(default_factory=dict)

    def residual(self, j) -> np.ndarray:
        """Current full-model error e^j (n x p)."""
        m = self.model
        return (m.f[j] - m.mu - m.eta[j] - self.beta @ m.phi - self.gamma[j] @ m.psi[j])


def initial_state(model: GibbsModel, decomposition_scores: tuple | None, config: GibbsConfig,
                  rng: np.random.Generator) -> GibbsState:
    if decomposition_scores is None:
        beta = np.zeros((model.n, len(model.lam)))
        gamma = {j: np.zeros((model.n, len(model.lam_specific[j]))) for j in model.populations}
    else:
        beta, gamma = decomposition_scores
        beta = np.array(beta, dtype=float)
        gamma = {j: np.array(g, dtype=float) for j, g in gamma.items()}
    st = GibbsState(model, beta, gamma, {}, {}, {}, rng)
    for j in model.populations:
        e = st.residual(j)
        st.sigma2[j] = max(float(np.mean(e ** 2)), 1e-12)
        st.omega[j] = (config.v_init + model.n_obs) / (model.smooth_ss[j] + config.v_init)
        if not model.has_smoothing(j):
            st.omega[j] = np.full(model.p, np.inf)
        st.v_omega[j] = config.v_init
        st.step[j] = 1.0
        st.accepted[j] = 0
        st.proposed[j] = 0
    if config.pooled_sigma:
        s = float(np.mean(list(st.sigma2.values())))
        st.sigma2 = {j: s for j in model.populations}
    return st


# ---------------------------------------------------------------------------
# full conditionals


def sigma_conditional(state: GibbsState, config: GibbsConfig) -> dict:
    """Shape and rate of 1/sigma^2 for each population (identical when pooled)."""
    m = state.model
    ss = {j: float(np.sum(state.residual(j) ** 2)) for j in m.populations}
    if config.pooled_sigma:
        shape = config.alpha1 + 0.5 * m.J * m.n * m.p
        rate = config.alpha2 + 0.5 * sum(ss.values())
        return {j: (shape, rate) for j in m.populations}
    return {j: (config.alpha1 + 0.5 * m.n * m.p, config.alpha2 + 0.5 * ss[j])
            for j in m.populations}


def gibbs_step_sigma(state: GibbsState, config: GibbsConfig) -> dict:
    params = sigma_conditional(state, config)
    if config.pooled_sigma:
        shape, rate = next(iter(params.values()))
        s2 = 1.0 / state.rng.gamma(shape, 1.0 / rate)
        state.sigma2 = {j: s2 for j in params}
    else:
        state.sigma2 = {j: 1.0 / state.rng.gamma(a, 1.0 / b) for j, (a, b) in params.items()}
    return state.sigma2


def beta_conditional(state: GibbsState, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean (per year) and variance of the k-th common score."""
    m = state.model
    lam = m.lam[k]
    phi = m.phi[k]
    ss_phi = float(phi @ phi)
    prec = 1.0 / lam
    num = np.zeros(m.n)
    for j in m.populations:
        partial = state.residual(j) + np.outer(state.beta[:, k], phi)
        num += partial @ phi / state.sigma2[j]
        prec += ss_phi / state.sigma2[j]
    var = 1.0 / prec
    return num * var, np.full(m.n, var)


def gibbs_step_beta(state: GibbsState, k: int, t: int | None = None) -> np.ndarray:
    """Draw beta_{t,k}; all years at once when ``t`` is None (they are conditionally independent)."""
    if state.model.lam[k] <= 0:
        state.beta[:, k] = 0.0
        return state.beta[:, k]
    mean, var = beta_conditional(state, k)
    if t is None:
        state.beta[:, k] = mean + np.sqrt(var) * state.rng.standard_normal(len(mean))
    else:
        state.beta[t, k] = mean[t] + math.sqrt(var[t]) * state.rng.standard_normal()
    return state.beta[:, k]


def gamma_conditional(state: GibbsState, j, l: int) -> tuple[np.ndarray, np.ndarray]:
    m = state.model
    lam = m.lam_specific[j][l]
    psi = m.psi[j][l]
    ss_psi = float(psi @ psi)
    s2 = state.sigma2[j]
    partial = state.residual(j) + np.outer(state.gamma[j][:, l], psi)
    denom = lam * ss_psi + s2
    mean = lam * (partial @ psi) / denom
    return mean, np.full(m.n, lam * s2 / denom)


def gibbs_step_gamma(state: GibbsState, j, l: int, t: int | None = None) -> np.ndarray:
    g = state.gamma[j]
    if state.model.lam_specific[j][l] <= 0:
        g[:, l] = 0.0
        return g[:, l]
    mean, var = gamma_conditional(state, j, l)
    if t is None:
        g[:, l] = mean + np.sqrt(var) * state.rng.standard_normal(len(mean))
    else:
        g[t, l] = mean[t] + math.sqrt(var[t]) * state.rng.standard_normal()
    return g[:, l]


def omega_conditional(state: GibbsState, j, config: GibbsConfig) -> tuple[np.ndarray, np.ndarray]:
    """Shape and rate (per age) of the smoothing-error precisions."""
    v = state.v_omega[j]
    ss = state.model.smooth_ss[j]
    dof = v + (1.0 if config.omega_form == "displayed" else state.model.n_obs)
    mean = dof / (ss + v)
    shape = np.full(len(ss), dof / 2)
    return shape, shape / mean


def log_v_target(v: float, omega: np.ndarray, prior_mean: float) -> float:
    if v <= 0:
        return -math.inf
    p = len(omega)
    eta = 1.0 / prior_mean + 0.5 * float(np.sum(np.log(1.0 / omega) + omega))
    return p * v / 2 * (math.log(v) - math.log(2.0)) - p * float(gammaln(v / 2)) - eta * v


def gibbs_step_omega(state: GibbsState, j, config: GibbsConfig, adapt: bool = False):
    shape, rate = omega_conditional(state, j, config)
    state.omega[j] = state.rng.gamma(shape, 1.0 / rate)
    v = state.v_omega[j]
    z = state.step[j] * state.rng.standard_normal()
    prop = v * math.exp(z)
    cur = log_v_target(v, state.omega[j], config.v_prior_mean)
    new = log_v_target(prop, state.omega[j], config.v_prior_mean)
    # log-scale random walk: the Jacobian adds log(prop / v) = z
    log_ratio = new - cur + z
    state.proposed[j] += 1
    accept = math.isfinite(prop) and np.log(state.rng.random()) < log_ratio
    if accept:
        state.v_omega[j] = prop
        state.accepted[j] += 1
    if adapt:
        state.step[j] *= math.exp(((1.0 if accept else 0.0) - config.target_accept)
                                  / math.sqrt(state.proposed[j]))
    return state.omega[j], state.v_omega[j]


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class PosteriorDraws:
    beta: np.ndarray
    gamma: dict
    sigma2: dict
    omega: dict
    v_omega: dict
    chain: np.ndarray
    acceptance: dict

    @property
    def size(self) -> int:
        return self.beta.shape[0]

    @property
    def populations(self) -> list:
        return list(self.gamma)

    def summary(self) -> list[dict]:
        rows = []
        for j in self.populations:
            for name, arr in (("sigma2", self.sigma2[j]), ("v_omega", self.v_omega[j]),
                              ("mean_inv_omega", (1.0 / self.omega[j]).mean(axis=1))):
                rows.append({"population": str(j), "parameter": name,
                             "mean": float(np.mean(arr)), "sd": float(np.std(arr)),
                             "q025": float(np.quantile(arr, 0.025)),
                             "q975": float(np.quantile(arr, 0.975))})
        return rows


def chain_generators(seed: int, chains: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(chains)]


def _sweep(state: GibbsState, config: GibbsConfig, adapt: bool) -> None:
    m = state.model
    for k in range(len(m.lam)):
        gibbs_step_beta(state, k)
    for j in m.populations:
        for l in range(len(m.lam_specific[j])):
            gibbs_step_gamma(state, j, l)
    gibbs_step_sigma(state, config)
    for j in m.populations:
        if m.has_smoothing(j):
            gibbs_step_omega(state, j, config, adapt)


def _run_chain(model: GibbsModel, start, config: GibbsConfig, rng) -> dict:
    st = initial_state(model, start, config, rng)
    keep = range(config.burn_in, config.total_draws, config.thin)
    R = len(keep)
    pops = model.populations
    out = {"beta": np.empty((R,) + st.beta.shape),
           "gamma": {j: np.empty((R,) + st.gamma[j].shape) for j in pops},
           "sigma2": {j: np.empty(R) for j in pops},
           "omega": {j: np.empty((R, model.p)) for j in pops},
           "v": {j: np.empty(R) for j in pops}}
    r = 0
    for it in range(config.total_draws):
        burning = it < config.burn_in
        _sweep(st, config, adapt=burning)
        if it == config.burn_in - 1:
            for j in pops:
                st.accepted[j] = st.proposed[j] = 0
        if not burning and (it - config.burn_in) % config.thin == 0:
            out["beta"][r] = st.beta
            for j in pops:
                out["gamma"][j][r] = st.gamma[j]
                out["sigma2"][j][r] = st.sigma2[j]
                out["omega"][j][r] = st.omega[j]
                out["v"][j][r] = st.v_omega[j]
            r += 1
    out["acceptance"] = {j: st.accepted[j] / max(st.proposed[j], 1) for j in pops}
    return out


def run_gibbs(model: GibbsModel, config: GibbsConfig = GibbsConfig(),
              start: tuple | None = None) -> PosteriorDraws:
    """Run ``config.chains`` independent chains and pool their retained draws."""
    rngs = chain_generators(config.seed, config.chains)
    chains = pmap(lambda c: _run_chain(model, start, config, rngs[c]), range(config.chains))
    pops = model.populations
    R = config.retained_per_chain
    return PosteriorDraws(
        beta=np.concatenate([c["beta"] for c in chains]),
        gamma={j: np.concatenate([c["gamma"][j] for c in chains]) for j in pops},
        sigma2={j: np.concatenate([c["sigma2"][j] for c in chains]) for j in pops},
        omega={j: np.concatenate([c["omega"][j] for c in chains]) for j in pops},
        v_omega={j: np.concatenate([c["v"][j] for c in chains]) for j in pops},
        chain=np.repeat(np.arange(config.chains), R),
        acceptance={j: float(np.mean([c["acceptance"][j] for c in chains])) for j in pops},
    )


def sample_posterior(decomposition, observed: dict | None = None,
                     config: GibbsConfig = GibbsConfig()) -> tuple[GibbsModel, PosteriorDraws]:
    model = GibbsModel.from_decomposition(decomposition, observed)
    start = (decomposition.common.scores,
             {j: decomposition.specific[j].scores for j in decomposition.populations})
    return model, run_gibbs(model, config, start)


# ---------------------------------------------------------------------------
# sample paths


@dataclass(frozen=True)
class SamplePaths:
    """Simulated log-rate paths, B x H x p for every population."""

    paths: dict
    ages: np.ndarray | None = None

    @property
    def B(self) -> int:
        return next(iter(self.paths.values())).shape[0]

    @property
    def H(self) -> int:
        return next(iter(self.paths.values())).shape[1]

    def __getitem__(self, pop) -> np.ndarray:
        return self.paths[pop]


def _series_path(series, kind, H, rng, score_noise, template=None) -> np.ndarray:
    model = template.apply(series) if template is not None else fit_score_model(series, kind)
    if score_noise:
        return model.simulate(H, rng)
    return model.forecast(H).mean


def simulate_paths(model: GibbsModel, draws: PosteriorDraws, score_model: str = "auto_arima",
                   H: int = 30, seed: int = 0, refit: bool = True, score_noise: bool = True,
                   max_paths: int | None = None, ages=None) -> SamplePaths:
    """Future sample paths, one per retained draw.

    For each draw the score series are forecast by ``score_model`` (refitted per
    draw, or fitted once to the posterior-mean scores and re-applied when
    ``refit`` is False). With ``score_noise`` the future scores are simulated
    from the fitted models rather than set to their point forecasts. Model
    error N(0, sigma^2) and smoothing error N(0, 1/omega_i) are added per age.
    """
    kind = {"rwf": "rwd", "arima": "auto_arima"}.get(score_model, score_model)
    D = draws.size if max_paths is None else min(max_paths, draws.size)
    if D < MIN_PATHS:
        warnings.warn(f"only {D} sample paths; intervals need at least {MIN_PATHS}", stacklevel=2)
    idx = np.unique(np.linspace(0, draws.size - 1, D).round().astype(int)) if D < draws.size \
        else np.arange(draws.size)
    pops = model.populations
    K = len(model.lam)
    templates = None
    if not refit:
        templates = {("beta", k): fit_score_model(draws.beta[:, :, k].mean(axis=0), kind)
                     for k in range(K)}
        for j in pops:
            for l in range(len(model.lam_specific[j])):
                templates[(j, l)] = fit_score_model(draws.gamma[j][:, :, l].mean(axis=0), kind)
    seeds = np.random.SeedSequence(seed).spawn(len(idx))

    def one(i):
        b = idx[i]
        rng = np.random.Generator(np.random.Philox(seeds[i]))
        beta_f = np.column_stack([
            _series_path(draws.beta[b, :, k], kind, H, rng, score_noise,
                         templates[("beta", k)] if templates else None)
            for k in range(K)]) if K else np.zeros((H, 0))
        out = {}
        for j in pops:
            L = len(model.lam_specific[j])
            gam_f = np.column_stack([
                _series_path(draws.gamma[j][b, :, l], kind, H, rng, score_noise,
                             templates[(j, l)] if templates else None)
                for l in range(L)]) if L else np.zeros((H, 0))
            curve = model.mu + model.eta[j] + beta_f @ model.phi + gam_f @ model.psi[j]
            e = rng.standard_normal((H, model.p)) * math.sqrt(draws.sigma2[j][b])
            delta = 1.0 / np.sqrt(draws.omega[j][b])
            out[j] = curve + e + delta * rng.standard_normal((H, model.p))
        return out

    res = pmap(one, range(len(idx)))
    paths = {j: np.stack([r[j] for r in res]) for j in pops}
    return SamplePaths(paths, None if ages is None else np.asarray(ages, dtype=float))


def prediction_interval(paths, level: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise empirical percentiles over the first axis (the paths)."""
    x = np.asarray(getattr(paths, "paths", paths), dtype=float)
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if x.shape[0] < MIN_PATHS:
        warnings.warn(f"interval from only {x.shape[0]} paths", stacklevel=2)
    tail = (1.0 - level) / 2
    return np.quantile(x, tail, axis=0), np.quantile(x, 1.0 - tail, axis=0)


__all__ = [
    "GibbsConfig", "GibbsModel", "GibbsState", "PosteriorDraws", "SamplePaths", "beta_conditional",
    "chain_generators", "gamma_conditional", "gibbs_step_beta", "gibbs_step_gamma",
    "gibbs_step_omega", "gibbs_step_sigma", "initial_state", "log_v_target", "omega_conditional",
    "prediction_interval", "run_gibbs", "sample_posterior", "sigma_conditional", "simulate_paths",
]
