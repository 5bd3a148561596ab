"""Period life tables from central death rates.

Closed age groups use q = n m / (1 + (n - a) m) with a = n / 2, except the
first group under the infant rule, where a_0 = min(0.07 + 1.7 m_0, 0.35).
The last group is open-ended: q = 1 and L = l / m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import AgeGrid

Q_CLAMP = 1.0 - 1e-12
INFANT_RULES = ("coale_demeny", "half")


def infant_separation(m0: float | np.ndarray, rule: str = "coale_demeny"):
    if rule == "half":
        return 0.5 * np.ones_like(np.asarray(m0, dtype=float))
    if rule != "coale_demeny":
        raise ValueError(f"unknown infant rule {rule!r}; expected one of {INFANT_RULES}")
    return np.minimum(0.07 + 1.7 * np.asarray(m0, dtype=float), 0.35)


@dataclass(frozen=True)
class LifeTable:
    ages: np.ndarray
    m: np.ndarray
    q: np.ndarray
    a: np.ndarray
    l: np.ndarray
    d: np.ndarray
    L: np.ndarray
    T: np.ndarray
    e: np.ndarray
    clamped: tuple[int, ...] = ()

    @property
    def e0(self) -> float:
        return float(self.e[0])


def _widths(grid: AgeGrid | np.ndarray | None, p: int) -> np.ndarray:
    if grid is None:
        return np.ones(p - 1)
    ages = grid.ages if isinstance(grid, AgeGrid) else np.asarray(grid, dtype=float)
    if len(ages) != p:
        raise ValueError(f"rates have {p} ages but the grid has {len(ages)}")
    return np.diff(ages)


def life_table(m, grid: AgeGrid | None = None, infant_rule: str = "coale_demeny") -> LifeTable:
    """Build the full table from one vector of rates (last age open-ended)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 1 or len(m) < 2:
        raise ValueError("need a rate vector with at least one closed age and an open age")
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise ValueError("death rates must be positive and finite")
    p = len(m)
    n = _widths(grid, p)
    a = 0.5 * n
    a[0] = infant_separation(m[0], infant_rule) * (n[0] if infant_rule == "half" else 1.0)
    q = n * m[:-1] / (1.0 + (n - a) * m[:-1])
    clamped = tuple(int(i) for i in np.flatnonzero(q > Q_CLAMP))
    q = np.minimum(q, Q_CLAMP)
    q = np.r_[q, 1.0]
    l = np.empty(p)
    l[0] = 1.0
    for i in range(1, p):
        l[i] = l[i - 1] * (1.0 - q[i - 1])
    d = l * q
    L = np.r_[n * l[1:] + a * d[:-1], l[-1] / m[-1]]
    T = np.cumsum(L[::-1])[::-1]
    e = T / l
    ages = np.arange(p, dtype=float) if grid is None else (
        grid.ages if isinstance(grid, AgeGrid) else np.asarray(grid, dtype=float))
    return LifeTable(np.asarray(ages, dtype=float), m, q, np.r_[a, 1.0 / m[-1]], l, d, L, T, e,
                     clamped)


def life_expectancy(m, grid: AgeGrid | None = None, infant_rule: str = "coale_demeny"):
    """e(0) for each row of ``m`` (any leading shape, ages last)."""
    m = np.asarray(m, dtype=float)
    lead = m.shape[:-1]
    flat = np.ascontiguousarray(m.reshape(-1, m.shape[-1]))
    if flat.shape[1] < 2:
        raise ValueError("need at least two ages")
    if not np.all(np.isfinite(flat)) or np.any(flat <= 0):
        raise ValueError("death rates must be positive and finite")
    infant_separation(0.0, infant_rule)
    n = np.ascontiguousarray(_widths(grid, flat.shape[1]))
    if infant_rule == "half":
        e0 = kernels.life_expectancy_batch(flat, n, False)
    else:
        e0 = kernels.life_expectancy_batch(flat, n, True)
    return np.asarray(e0).reshape(lead)


@dataclass(frozen=True)
class E0Distribution:
    """Per-horizon life expectancy samples (B x H) and percentile bands."""

    samples: np.ndarray
    levels: tuple[float, ...]
    lower: dict
    upper: dict

    @property
    def median(self) -> np.ndarray:
        return np.median(self.samples, axis=0)

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def percentile_band(samples, level: float, axis: int = 0):
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2
    return (np.quantile(samples, tail, axis=axis), np.quantile(samples, 1.0 - tail, axis=axis))


def e0_distribution(log_rate_paths, grid: AgeGrid | None = None, levels=(0.8, 0.95),
                    infant_rule: str = "coale_demeny") -> E0Distribution:
    """Life expectancy for every simulated path of log rates, shape (B, H, p)."""
    x = getattr(log_rate_paths, "paths", log_rate_paths)
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError("paths must have shape (B, H, p)")
    if not np.all(np.isfinite(x)):
        raise ValueError("paths contain non-finite values")
    e0 = life_expectancy(np.exp(x), grid, infant_rule)
    lo, hi = {}, {}
    for lev in levels:
        lo[lev], hi[lev] = percentile_band(e0, lev)
    return E0Distribution(e0, tuple(levels), lo, hi)
