"""Synthetic mortality data with a known common trend and population residuals.

Log rates follow

    log m^j_t(x) = a^j(x) + b(x) K_t + psi(x) g^j_t

with K a random walk with drift shared by all populations and g^j independent
stationary AR(1) processes. Deaths are Poisson given exposures, so observed
rates carry realistic sampling noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AgeGrid, MortalityDataset, PopulationData, PopulationLabel, impute_rates


def baseline_log_rates(ages) -> np.ndarray:
    """Infant mortality, an accident hump and Gompertz ageing, on the log scale."""
    x = np.asarray(ages, dtype=float)
    m = (0.006 * np.exp(-1.2 * x) + 0.0004 * np.exp(-((x - 22.0) / 8.0) ** 2)
         + 0.00004 * np.exp(0.095 * x) + 0.0001)
    return np.log(m)


def improvement_loadings(ages) -> np.ndarray:
    """Age pattern of the common trend: faster improvement at young ages."""
    x = np.asarray(ages, dtype=float)
    return 0.012 + 0.01 * np.exp(-x / 30.0)


def residual_shape(ages) -> np.ndarray:
    x = np.asarray(ages, dtype=float)
    return 0.06 * np.exp(-((x - 30.0) / 15.0) ** 2) + 0.02


@dataclass(frozen=True)
class SyntheticTruth:
    K: np.ndarray
    gamma: dict
    log_rates: dict


def _ar1(n, phi, sd, rng, burn=100) -> np.ndarray:
    e = rng.normal(0.0, sd, n + burn)
    g = np.zeros(n + burn)
    for t in range(1, n + burn):
        g[t] = phi * g[t - 1] + e[t]
    return g[burn:]


def _exposures(ages, scale) -> np.ndarray:
    x = np.asarray(ages, dtype=float)
    return scale * np.exp(-0.0004 * x ** 2) + 200.0


def simulate_populations(groups: dict, n: int = 60, ages=None, start_year: int = 1950,
                         seed: int = 0, drift: float = -1.0, trend_sd: float = 0.6,
                         phi: float = 0.7, resid_sd: float = 1.0,
                         exposure_scale: float = 4e5, name: str = "Synthetic",
                         with_totals: bool = True, return_truth: bool = False):
    """Simulate populations grouped by region.

    ``groups`` maps a region name (or ``None`` for a single national group) to
    ``{sex: level_offset}`` with sex ``"female"``/``"male"``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    ages = np.arange(96, dtype=float) if ages is None else np.asarray(ages, dtype=float)
    base = baseline_log_rates(ages)
    b = improvement_loadings(ages)
    psi = residual_shape(ages)
    K = np.cumsum(np.r_[0.0, drift + trend_sd * rng.standard_normal(n - 1)])
    K -= K.mean()
    years = np.arange(start_year, start_year + n)
    pops, truth_g, truth_y, flags = {}, {}, {}, {}
    for region, sexes in groups.items():
        deaths_tot = np.zeros((n, len(ages)))
        expo_tot = np.zeros((n, len(ages)))
        for sex, offset in sexes.items():
            lab = PopulationLabel(name, sex, region)
            g = _ar1(n, phi, resid_sd, rng)
            y = base + offset + np.outer(K, b) + np.outer(g, psi)
            N = np.tile(_exposures(ages, exposure_scale), (n, 1))
            D = rng.poisson(np.exp(y) * N).astype(float)
            rates = D / N
            rates, N, fl = impute_rates(rates, N, years, np.zeros_like(rates, dtype=bool))
            pops[lab] = PopulationData(rates, N)
            flags[lab] = fl
            truth_g[lab], truth_y[lab] = g, y
            deaths_tot += D
            expo_tot += N
        if with_totals:
            lab = PopulationLabel(name, "total", region)
            rates, N, fl = impute_rates(deaths_tot / expo_tot, expo_tot, years,
                                        np.zeros((n, len(ages)), dtype=bool))
            pops[lab] = PopulationData(rates, N)
            flags[lab] = fl
    ds = MortalityDataset(AgeGrid(ages, True), years, pops, None, flags)
    if return_truth:
        return ds, SyntheticTruth(K, truth_g, truth_y)
    return ds


def simulate_two_sex(n: int = 60, seed: int = 0, **kw):
    """One national population with female and male series and their total."""
    return simulate_populations({None: {"female": -0.25, "male": 0.15}}, n=n, seed=seed, **kw)


def simulate_regions(regions=("A", "B", "C"), n: int = 50, seed: int = 0, **kw):
    """Sex-within-region data for the two-level hierarchical method."""
    groups = {r: {"female": -0.25 + 0.05 * i, "male": 0.15 + 0.05 * i}
              for i, r in enumerate(regions)}
    return simulate_populations(groups, n=n, seed=seed, **kw)
