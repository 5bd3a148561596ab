"""Functional principal components on an age grid and the multilevel decomposition.

Curves live on a fixed grid; integrals over age use trapezoidal quadrature
weights, so eigenfunctions are orthonormal under ``<f, g> = sum_i q_i f_i g_i``.
Sample covariances use the 1/n convention throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._parallel import pmap

ZERO_EIGEN_RTOL = 1e-12
ROUNDOFF_RTOL = 1e-10


def trapezoid_weights(ages) -> np.ndarray:
    x = np.asarray(ages, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two grid points")
    h = np.diff(x)
    q = np.zeros_like(x)
    q[:-1] += h / 2
    q[1:] += h / 2
    return q


@dataclass(frozen=True)
class EigenSystem:
    """Retained eigenfunctions (K x p), eigenvalues (K,) and scores (n x K).

    ``all_eigenvalues`` keeps the full non-negative spectrum for variance shares.
    """

    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray
    all_eigenvalues: np.ndarray
    threshold: float = 0.9

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    @property
    def total_variance(self) -> float:
        return float(self.all_eigenvalues.sum())

    def reconstruct(self) -> np.ndarray:
        return self.scores @ self.eigenfunctions

    def explained(self) -> np.ndarray:
        tot = self.total_variance
        return np.cumsum(self.eigenvalues) / tot if tot > 0 else np.zeros(self.K)


def roundoff_floor(surface, quad) -> float:
    """Eigenvalue level indistinguishable from round-off in an uncentred surface."""
    top = float(np.max(np.abs(surface))) if np.size(surface) else 0.0
    return (ROUNDOFF_RTOL * top) ** 2 * float(np.sum(quad))


def select_components(eigenvalues, threshold: float) -> int:
    """Smallest K whose cumulative share of the positive spectrum reaches ``threshold``."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    if not len(lam) or lam[0] <= 0:
        return 0
    pos = lam[lam > ZERO_EIGEN_RTOL * lam[0]]
    share = np.cumsum(pos) / pos.sum()
    return int(np.searchsorted(share, threshold - 1e-12) + 1)


def _orient(phi: np.ndarray, scores: np.ndarray) -> None:
    for k in range(phi.shape[0]):
        if phi[k, np.argmax(np.abs(phi[k]))] < 0:
            phi[k] *= -1
            scores[:, k] *= -1


def empirical_fpca(centered, threshold: float = 0.9, ages=None, quad=None,
                   zero_floor: float = 0.0) -> EigenSystem:
    """Eigen-decompose the sample covariance operator of centered curves.

    Parameters
    ----------
    centered : array_like, shape (n, p)
        Curves with their mean already removed.
    threshold : float
        Cumulative variance share used to choose the number of components.
    ages, quad : array_like, optional
        Grid (for trapezoid weights) or explicit quadrature weights.
    zero_floor : float
        Eigenvalues at or below this absolute level count as zero, so that
        round-off left in a residual surface yields no components.
    """
    X = np.asarray(centered, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ValueError("FPCA needs at least two curves")
    if quad is None:
        quad = trapezoid_weights(np.arange(p, dtype=float) if ages is None else ages)
    sq = np.sqrt(np.asarray(quad, dtype=float))
    Xs = X * sq
    if n < p:
        G = Xs @ Xs.T / n
        lam, U = np.linalg.eigh(G)
        lam, U = lam[::-1], U[:, ::-1]
    else:
        C = Xs.T @ Xs / n
        lam, V = np.linalg.eigh(C)
        lam, V = lam[::-1], V[:, ::-1]
    lam = np.where(lam > zero_floor, lam, 0.0)
    if lam[0] > 0:
        lam = np.where(lam > ZERO_EIGEN_RTOL * lam[0], lam, 0.0)
    K = select_components(lam, threshold)
    if K == 0:
        return EigenSystem(np.zeros((0, p)), np.zeros(0), np.zeros((n, 0)), lam, threshold)
    if n < p:
        # phi_k = Q^{-1/2} Xs^T u_k / sqrt(n lam_k)
        V = Xs.T @ U[:, :K] / np.sqrt(n * lam[:K])
    else:
        V = V[:, :K]
    phi = (V / sq[:, None]).T.copy()
    scores = X @ (phi * quad).T
    _orient(phi, scores)
    return EigenSystem(phi, lam[:K].copy(), scores, lam, threshold)


def mean_function(total_surface) -> np.ndarray:
    f = np.asarray(total_surface, dtype=float)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("need an n x p surface with n >= 2")
    return f.mean(axis=0)


def deviation_function(population_surface, mu) -> np.ndarray:
    f = np.asarray(population_surface, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if f.shape[-1] != mu.shape[0]:
        raise ValueError("surface and mean have different grids")
    return f.mean(axis=0) - mu


def total_variability(surface) -> np.ndarray:
    """Pointwise covariance (1/n) sum_t (f_t - fbar)(f_t - fbar)^T."""
    f = np.asarray(surface, dtype=float)
    if f.shape[0] < 2:
        raise ValueError("need n >= 2")
    X = f - f.mean(axis=0)
    return X.T @ X / f.shape[0]


def integrated_variance(surface, ages) -> float:
    """Trace of the total variability operator under trapezoid quadrature."""
    return float(np.sum(trapezoid_weights(ages) * np.diag(total_variability(surface))))


def within_cluster_variability(common_sum: float, specific_sum: float) -> float:
    if common_sum < 0 or specific_sum < 0:
        raise ValueError("eigenvalue sums must be non-negative")
    if common_sum + specific_sum == 0:
        raise ValueError("within-cluster variability undefined when both sums are zero")
    return common_sum / (common_sum + specific_sum)


@dataclass(frozen=True)
class MultilevelDecomposition:
    ages: np.ndarray
    mu: np.ndarray
    eta: Mapping[object, np.ndarray]
    common: EigenSystem
    specific: Mapping[object, EigenSystem]
    sigma2: Mapping[object, float]
    residuals: Mapping[object, np.ndarray] = field(repr=False)
    P1: float = 0.9
    P2: float = 0.9

    @property
    def K(self) -> int:
        return self.common.K

    def L(self, pop) -> int:
        return self.specific[pop].K

    @property
    def populations(self) -> list:
        return list(self.eta)

    def within_cluster(self, pop) -> float:
        return within_cluster_variability(self.common.total_variance,
                                          self.specific[pop].total_variance)

    def fitted(self, pop) -> np.ndarray:
        """mu + eta + common part + specific part for every training year."""
        spec = self.specific[pop]
        return (self.mu + self.eta[pop] + self.common.reconstruct() + spec.reconstruct())


def multilevel_decompose(total_surface, population_surfaces: Mapping, ages, P1: float = 0.9,
                         P2: float = 0.9) -> MultilevelDecomposition:
    """Aggregate mean, population deviations, common and population-specific eigen-systems."""
    total = np.asarray(total_surface, dtype=float)
    ages = np.asarray(ages, dtype=float)
    quad = trapezoid_weights(ages)
    mu = mean_function(total)
    floor = roundoff_floor(total, quad)
    common = empirical_fpca(total - mu, P1, quad=quad, zero_floor=floor)
    R = common.reconstruct()
    pops = list(population_surfaces)
    for pop in pops:
        if np.shape(population_surfaces[pop]) != total.shape:
            raise ValueError(f"population {pop} does not match the aggregate's shape")

    def one(pop):
        f = np.asarray(population_surfaces[pop], dtype=float)
        eta = deviation_function(f, mu)
        U = f - mu - eta - R
        scale = float(np.sum(quad * np.var(f, axis=0)))
        low = max(ZERO_EIGEN_RTOL * scale, roundoff_floor(f, quad), floor)
        spec = empirical_fpca(U, P2, quad=quad, zero_floor=low)
        e = U - spec.reconstruct()
        return eta, spec, float(np.var(e)), e

    parts = dict(zip(pops, pmap(one, pops)))
    return MultilevelDecomposition(
        ages=ages, mu=mu,
        eta={k: v[0] for k, v in parts.items()},
        common=common,
        specific={k: v[1] for k, v in parts.items()},
        sigma2={k: v[2] for k, v in parts.items()},
        residuals={k: v[3] for k, v in parts.items()},
        P1=P1, P2=P2,
    )
