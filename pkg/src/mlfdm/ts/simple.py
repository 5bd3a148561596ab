"""Random walk with drift and AR(1) score models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import ScoreForecast, TsModel

PHI_BOUND = 0.999


@dataclass
class RandomWalkDrift(TsModel):
    drift: float = 0.0

    def __post_init__(self):
        self.kind = "rwd"

    def forecast(self, H: int) -> ScoreForecast:
        h = np.arange(1, H + 1, dtype=float)
        mean = self.y[-1] + h * self.drift
        se = math.sqrt(self.sigma2) * np.sqrt(h * (1 + h / (self.n - 1)))
        return ScoreForecast(mean, se, self)

    def simulate(self, H: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Paths with drift-estimation uncertainty, matching the closed-form se."""
        B = 1 if size is None else size
        sd = math.sqrt(self.sigma2)
        drift = self.drift + rng.standard_normal(B) * sd / math.sqrt(self.n - 1)
        h = np.arange(1, H + 1, dtype=float)
        steps = rng.standard_normal((B, H)) * sd
        out = self.y[-1] + drift[:, None] * h + np.cumsum(steps, axis=1)
        return out[0] if size is None else out

    def apply(self, y) -> "RandomWalkDrift":
        m = fit_rwd(y)
        m.flags = self.flags
        return m


def fit_rwd(series) -> RandomWalkDrift:
    """Random walk with drift; drift = (y_n - y_1) / (n - 1)."""
    y = np.asarray(series, dtype=float)
    n = len(y)
    if n < 2:
        raise ValueError("random walk with drift needs at least two observations")
    drift = (y[-1] - y[0]) / (n - 1)
    dy = np.diff(y)
    sigma2 = float(np.sum((dy - drift) ** 2) / (n - 2)) if n > 2 else 0.0
    ll = float("nan")
    if sigma2 > 0:
        ll = -0.5 * (n - 1) * (math.log(2 * math.pi * sigma2)) - 0.5 * np.sum((dy - drift) ** 2) / sigma2
    return RandomWalkDrift(y=y, sigma2=sigma2, loglik=ll, drift=float(drift))


@dataclass
class AR1Model(TsModel):
    intercept: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        self.kind = "ar1"

    @property
    def long_run_mean(self) -> float:
        return self.intercept / (1 - self.phi)

    def forecast(self, H: int) -> ScoreForecast:
        m = self.long_run_mean
        h = np.arange(1, H + 1)
        mean = m + self.phi ** h * (self.y[-1] - m)
        se = np.sqrt(self.sigma2 * np.cumsum(self.phi ** (2 * (h - 1))))
        return ScoreForecast(mean, se, self)

    def simulate(self, H: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        B = 1 if size is None else size
        eps = rng.standard_normal((B, H)) * math.sqrt(self.sigma2)
        out = np.empty((B, H))
        prev = np.full(B, self.y[-1])
        for h in range(H):
            prev = self.intercept + self.phi * prev + eps[:, h]
            out[:, h] = prev
        return out[0] if size is None else out

    def apply(self, y) -> "AR1Model":
        return AR1Model(y=np.asarray(y, dtype=float), sigma2=self.sigma2, intercept=self.intercept,
                        phi=self.phi, flags=self.flags)


def fit_ar1(series) -> AR1Model:
    """AR(1) with intercept by conditional least squares.

    A non-stationary or indeterminate estimate is projected into
    (-0.999, 0.999) and flagged ``"projected"``.
    """
    y = np.asarray(series, dtype=float)
    n = len(y)
    if n < 5:
        raise ValueError("AR(1) needs at least five observations")
    x, z = y[:-1], y[1:]
    xc = x - x.mean()
    sxx = xc @ xc
    flags: tuple[str, ...] = ()
    if sxx <= 1e-14 * max(1.0, float(x @ x)):
        phi = 0.0
        flags = ("projected",)
    else:
        phi = float(xc @ (z - z.mean()) / sxx)
        if not abs(phi) < 1:
            phi = math.copysign(PHI_BOUND, phi)
            flags = ("projected",)
    intercept = float(z.mean() - phi * x.mean())
    if flags and sxx <= 1e-14 * max(1.0, float(x @ x)):
        intercept = float(y.mean()) * (1 - phi)
    resid = z - intercept - phi * x
    sigma2 = float(resid @ resid / (n - 3)) if n > 3 else 0.0
    ll = float("nan")
    if sigma2 > 0:
        ll = -0.5 * (n - 1) * math.log(2 * math.pi * sigma2) - 0.5 * (resid @ resid) / sigma2
    return AR1Model(y=y, sigma2=sigma2, loglik=ll, intercept=intercept, phi=phi, flags=flags)
