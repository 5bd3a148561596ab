"""Shared types for the score-forecasting engines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TsFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoreForecast:
    mean: np.ndarray
    se: np.ndarray
    model: "TsModel"

    @property
    def horizon(self) -> int:
        return len(self.mean)


@dataclass
class TsModel:
    """Base class of fitted univariate models.

    Subclasses implement ``forecast``, ``simulate`` and ``apply`` (re-run the
    same fitted parameters on a different history).
    """

    kind: str = field(init=False, default="")
    y: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    sigma2: float = 0.0
    loglik: float = float("nan")
    aicc: float = float("nan")
    flags: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return len(self.y)

    def forecast(self, H: int) -> ScoreForecast:  # pragma: no cover - abstract
        raise NotImplementedError

    def simulate(self, H: int, rng: np.random.Generator) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def apply(self, y) -> "TsModel":  # pragma: no cover
        raise NotImplementedError


def psi_weights(ar, ma, H: int, d: float = 0) -> np.ndarray:
    """MA(infinity) weights of theta(B) / (phi(B) (1 - B)^d), first H terms.

    ``d`` may be fractional; integer ``d`` gives the ARIMA integration weights.
    """
    ar = np.asarray(ar, dtype=float)
    ma = np.asarray(ma, dtype=float)
    psi = np.zeros(H)
    if H == 0:
        return psi
    psi[0] = 1.0
    for j in range(1, H):
        v = ma[j - 1] if j - 1 < len(ma) else 0.0
        for i in range(1, min(j, len(ar)) + 1):
            v += ar[i - 1] * psi[j - i]
        psi[j] = v
    if d:
        # (1 - B)^{-d} weights: g_k = g_{k-1} (k - 1 + d) / k
        g = np.empty(H)
        g[0] = 1.0
        for k in range(1, H):
            g[k] = g[k - 1] * (k - 1 + d) / k
        psi = np.convolve(psi, g)[:H]
    return psi
