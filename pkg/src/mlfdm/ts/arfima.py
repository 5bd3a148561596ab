"""ARFIMA via log-periodogram (GPH) memory estimation and ARMA on the filtered series."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .arima import ArimaModel, auto_arima
from .base import ScoreForecast, TsModel, psi_weights

D_BOUND = 0.49


def gph_estimate(series, bandwidth: float = 0.5) -> float:
    """Geweke-Porter-Hudak estimate of the memory parameter d.

    Regresses the log periodogram on ``log(4 sin^2(lambda/2))`` over the
    lowest ``floor(n**bandwidth)`` Fourier frequencies.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    m = int(math.floor(n ** bandwidth))
    if m < 3:
        raise ValueError("series too short for the log-periodogram regression")
    x = x - x.mean()
    fft = np.fft.rfft(x)
    j = np.arange(1, m + 1)
    lam = 2 * np.pi * j / n
    I = np.abs(fft[1:m + 1]) ** 2 / (2 * np.pi * n)
    if np.any(I <= 0):
        return 0.0
    reg = np.log(4 * np.sin(lam / 2) ** 2)
    slope = np.polyfit(reg, np.log(I), 1)[0]
    return float(-slope)


@dataclass
class ArfimaModel(TsModel):
    d_frac: float = 0.0
    d_int: int = 0
    level: float = 0.0
    arma: ArimaModel | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = "arfima"

    def _z(self, y=None):
        y = self.y if y is None else y
        return np.diff(y, self.d_int) if self.d_int else y

    def _reintegrate(self, u_future: np.ndarray) -> np.ndarray:
        """Map future fractionally differenced values back to the series scale."""
        u_hist = self.arma.y
        n = len(u_hist)
        u_future = np.atleast_2d(u_future)
        out = np.empty_like(u_future)
        for b in range(u_future.shape[0]):
            full = np.concatenate([u_hist, u_future[b]])
            out[b] = kernels.frac_integrate(full, self.d_frac)[n:] + self.level
        for k in range(self.d_int, 0, -1):
            last = np.diff(self.y, k - 1)[-1] if k - 1 else self.y[-1]
            out = last + np.cumsum(out, axis=1)
        return out

    def forecast(self, H: int) -> ScoreForecast:
        fc = self.arma.forecast(H)
        mean = self._reintegrate(fc.mean)[0]
        psi = psi_weights(self.arma.ar, self.arma.ma, H, self.d_frac)
        if self.d_int:
            psi = np.cumsum(psi) if self.d_int == 1 else np.cumsum(np.cumsum(psi))
        se = np.sqrt(self.arma.sigma2 * np.cumsum(psi ** 2))
        return ScoreForecast(mean, se, self)

    def simulate(self, H: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        u = self.arma.simulate(H, rng, size=1 if size is None else size)
        out = self._reintegrate(u)
        return out[0] if size is None else out

    def apply(self, y) -> "ArfimaModel":
        y = np.asarray(y, dtype=float)
        z = np.diff(y, self.d_int) if self.d_int else y
        level = float(z.mean())
        u = kernels.frac_diff(np.ascontiguousarray(z - level), self.d_frac)
        return ArfimaModel(y=y, sigma2=self.sigma2, flags=self.flags, d_frac=self.d_frac,
                           d_int=self.d_int, level=level, arma=self.arma.apply(u))


def fit_arfima(series, max_d_int: int = 1) -> ArfimaModel:
    """Fractional d by GPH, then an ARMA chosen by AICc on the filtered series.

    If the memory estimate is 0.5 or more the series is differenced first
    (at most ``max_d_int`` times); the remaining d is clamped to (-0.49, 0.49).
    """
    y = np.asarray(series, dtype=float)
    if len(y) < 30:
        raise ValueError("ARFIMA needs at least 30 observations")
    flags: list[str] = []
    d_int = 0
    z = y
    d = gph_estimate(z)
    while d >= 0.5 and d_int < max_d_int:
        d_int += 1
        z = np.diff(z)
        d = gph_estimate(z)
    if not -D_BOUND <= d <= D_BOUND:
        d = float(np.clip(d, -D_BOUND, D_BOUND))
        flags.append("d_clamped")
    level = float(z.mean())
    u = kernels.frac_diff(np.ascontiguousarray(z - level), d)
    arma = auto_arima(u, d=0, allow_mean=False)
    if not isinstance(arma, ArimaModel):
        from .arima import fit_arima

        arma = fit_arima(u, (0, 0, 0), include_mean=False)
        flags.append("arma_fallback")
    return ArfimaModel(y=y, sigma2=arma.sigma2, loglik=arma.loglik, aicc=arma.aicc,
                       flags=tuple(flags), d_frac=d, d_int=d_int, level=level, arma=arma)
