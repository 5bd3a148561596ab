"""Weighted L1 penalized smoothing of log mortality curves.

Each year's log-rate curve is smoothed by minimizing

    sum_i w_i |y_i - theta_i| + alpha * sum_i |theta'_{i+1} - theta'_i|

where theta' are forward first differences divided by the age spacing, subject
to theta being non-decreasing from ``monotone_from_age`` on. The problem is
solved exactly as a linear program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ._parallel import pmap
from .data import AgeGrid, DataError, MortalityDataset, PopulationLabel

DEFAULT_ALPHA_GRID = np.geomspace(1e-3, 1e2, 10)


class SmoothingError(RuntimeError):
    """The LP solver failed; carries the best iterate it produced."""

    def __init__(self, message: str, best: np.ndarray | None = None, residual: float | None = None):
        super().__init__(message)
        self.best = best
        self.residual = residual


def log_rate_variance(rates, exposures) -> np.ndarray:
    """Poisson approximation to the variance of log central death rates, 1 / (m N)."""
    m = np.asarray(rates, dtype=float)
    N = np.asarray(exposures, dtype=float)
    if m.shape != N.shape:
        raise DataError("rates and exposures differ in shape")
    bad = ~(m > 0) | ~(N > 0)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"non-positive rate or exposure at cell {idx}: "
                        f"m={m[idx]!r}, N={N[idx]!r}")
    return 1.0 / (m * N)


def _second_difference(ages: np.ndarray) -> sp.csr_matrix:
    """Matrix mapping theta to differences of consecutive slopes (p-2 x p)."""
    p = len(ages)
    h = np.diff(ages)
    rows, cols, vals = [], [], []
    for k in range(p - 2):
        # slope_{k+1} - slope_k
        rows += [k, k, k]
        cols += [k, k + 1, k + 2]
        vals += [1.0 / h[k], -1.0 / h[k] - 1.0 / h[k + 1], 1.0 / h[k + 1]]
    return sp.csr_matrix((vals, (rows, cols)), shape=(p - 2, p))


def smoothing_objective(f, y, w, alpha, ages) -> float:
    f = np.asarray(f, dtype=float)
    D = _second_difference(np.asarray(ages, dtype=float))
    return float(np.sum(np.asarray(w) * np.abs(np.asarray(y) - f)) + alpha * np.sum(np.abs(D @ f)))


def monotone_start(ages, monotone_from_age: float | None) -> int | None:
    if monotone_from_age is None:
        return None
    idx = np.flatnonzero(np.asarray(ages) >= monotone_from_age)
    return int(idx[0]) if len(idx) else None


def smooth_year(y, w, alpha: float, ages=None, monotone_from_age: float | None = 65.0,
                max_iter: int = 100_000) -> np.ndarray:
    """Smooth one curve of log rates.

    Parameters
    ----------
    y, w : array_like, shape (p,)
        Log rates and positive weights (inverse variances).
    alpha : float
        Roughness penalty, ``>= 0``.
    ages : array_like, optional
        Grid positions; defaults to ``0..p-1``.
    monotone_from_age : float or None
        The fit is non-decreasing over ages ``>=`` this value.

    Returns
    -------
    numpy.ndarray
        The smoothed curve.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    p = len(y)
    ages = np.arange(p, dtype=float) if ages is None else np.asarray(ages, dtype=float)
    if p < 3:
        raise ValueError("smoothing needs at least 3 grid points")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if w.shape != y.shape or ages.shape != y.shape:
        raise ValueError("y, w and ages must have the same length")
    if not np.all(w > 0):
        raise ValueError("weights must be positive")

    D = _second_difference(ages)
    q = p - 2
    I = sp.identity(p, format="csr")
    Zpq = sp.csr_matrix((p, q))
    Zqp = sp.csr_matrix((q, p))
    Iq = sp.identity(q, format="csr")
    # variables: theta (p, free), u (p >= 0), v (q >= 0)
    blocks = [
        [I, -I, Zpq],
        [-I, -I, Zpq],
        [D, Zqp, -Iq],
        [-D, Zqp, -Iq],
    ]
    b = [y, -y, np.zeros(q), np.zeros(q)]
    i0 = monotone_start(ages, monotone_from_age)
    if i0 is not None and i0 < p - 1:
        m = p - 1 - i0
        M = sp.csr_matrix(
            (np.r_[np.ones(m), -np.ones(m)],
             (np.r_[np.arange(m), np.arange(m)], np.r_[np.arange(i0, p - 1), np.arange(i0 + 1, p)])),
            shape=(m, p))
        blocks.append([M, sp.csr_matrix((m, p)), sp.csr_matrix((m, q))])
        b.append(np.zeros(m))
    A = sp.bmat(blocks, format="csc")
    c = np.r_[np.zeros(p), w, np.full(q, float(alpha))]
    bounds = [(None, None)] * p + [(0, None)] * (p + q)
    res = linprog(c, A_ub=A, b_ub=np.concatenate(b), bounds=bounds, method="highs",
                  options={"maxiter": max_iter, "primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0 or res.x is None:
        best = None if res.x is None else res.x[:p]
        resid = None if best is None else float(np.max(np.abs(y - best)))
        raise SmoothingError(f"L1 smoothing LP failed: {res.message}", best, resid)
    f = res.x[:p].copy()
    if i0 is not None:
        # clear solver-tolerance violations of the monotone constraint
        f[i0:] = np.maximum.accumulate(f[i0:])
    return f


@dataclass(frozen=True)
class SmoothedSurface:
    grid: AgeGrid
    years: np.ndarray
    f: np.ndarray
    delta2: np.ndarray
    alpha: float
    monotone_from_age: float | None = 65.0
    label: PopulationLabel | None = None

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.delta2

    @property
    def n(self) -> int:
        return self.f.shape[0]

    def subset(self, start: int, stop: int) -> "SmoothedSurface":
        return SmoothedSurface(self.grid, self.years[start:stop], self.f[start:stop],
                               self.delta2[start:stop], self.alpha, self.monotone_from_age,
                               self.label)


def _normalized(w: np.ndarray) -> np.ndarray:
    return w / w.mean(axis=-1, keepdims=True)


def smooth_matrix(y, w, ages, alpha: float, monotone_from_age: float | None = 65.0) -> np.ndarray:
    """Smooth every row of ``y``. Weights are rescaled to mean one within each row."""
    y = np.asarray(y, dtype=float)
    wn = _normalized(np.asarray(w, dtype=float))
    rows = pmap(lambda t: smooth_year(y[t], wn[t], alpha, ages, monotone_from_age),
                range(y.shape[0]))
    return np.array(rows)


def select_alpha(y, w, ages, grid=DEFAULT_ALPHA_GRID, monotone_from_age: float | None = 65.0,
                 max_cv_years: int | None = 30) -> tuple[float, np.ndarray]:
    """Choose alpha by leave-one-year-out cross-validation.

    Year t is held out and predicted by the average of the smoothed curves of
    its neighbouring years; the score is the weighted L1 prediction error.
    Returns the chosen alpha and the score for every grid value.
    """
    y = np.asarray(y, dtype=float)
    wn = _normalized(np.asarray(w, dtype=float))
    n = y.shape[0]
    if n < 2:
        return float(grid[len(grid) // 2]), np.full(len(grid), np.nan)
    targets = np.arange(n)
    if max_cv_years is not None and n > max_cv_years:
        targets = np.unique(np.linspace(0, n - 1, max_cv_years).round().astype(int))
    needed = sorted({s for t in targets for s in (t - 1, t + 1) if 0 <= s < n})
    scores = np.empty(len(grid))
    for g, alpha in enumerate(grid):
        fits = dict(zip(needed, pmap(lambda s: smooth_year(y[s], wn[s], alpha, ages,
                                                           monotone_from_age), needed)))
        err = 0.0
        for t in targets:
            nb = [fits[s] for s in (t - 1, t + 1) if s in fits]
            pred = np.mean(nb, axis=0)
            err += np.sum(wn[t] * np.abs(y[t] - pred))
        scores[g] = err / len(targets)
    best = np.flatnonzero(scores <= scores.min() * (1 + 1e-12))
    return float(grid[best[-1]]), scores


def smooth_surface(dataset: MortalityDataset, population: PopulationLabel | str,
                   alpha_policy: str | float = "auto", monotone_from_age: float | None = 65.0,
                   alpha_grid=DEFAULT_ALPHA_GRID, cv_rows: slice | None = None) -> SmoothedSurface:
    """Smooth all years of one population.

    ``alpha_policy`` is ``"auto"`` (cross-validated over ``alpha_grid``) or a
    fixed value. ``cv_rows`` restricts the years used for the alpha choice,
    e.g. to a training window.
    """
    if isinstance(population, str):
        population = PopulationLabel.parse(population)
    pd = dataset[population]
    delta2 = log_rate_variance(pd.rates, pd.exposures)
    y = np.log(pd.rates)
    w = 1.0 / delta2
    ages = dataset.grid.ages
    if alpha_policy == "auto":
        sl = cv_rows or slice(None)
        alpha, _ = select_alpha(y[sl], w[sl], ages, alpha_grid, monotone_from_age)
    else:
        alpha = float(alpha_policy)
    f = smooth_matrix(y, w, ages, alpha, monotone_from_age)
    return SmoothedSurface(dataset.grid, dataset.years.copy(), f, delta2, alpha,
                           monotone_from_age, population)


def smooth_dataset(dataset: MortalityDataset, alpha_policy: str | float = "auto",
                   monotone_from_age: float | None = 65.0,
                   cv_rows: slice | None = None) -> dict[PopulationLabel, SmoothedSurface]:
    return {lab: smooth_surface(dataset, lab, alpha_policy, monotone_from_age, cv_rows=cv_rows)
            for lab in dataset.labels}
