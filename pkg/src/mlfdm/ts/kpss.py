"""KPSS stationarity test and the successive-differencing choice of d."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Kwiatkowski et al. (1992) asymptotic 5% critical values
CRITICAL_5PCT = {"c": 0.463, "ct": 0.146}


@dataclass(frozen=True)
class KPSSResult:
    statistic: float
    lags: int
    critical: float

    @property
    def reject_at_5pct(self) -> bool:
        return self.statistic > self.critical


def default_lags(n: int) -> int:
    return int(np.floor(4 * (n / 100) ** 0.25))


def kpss_statistic(series, lags: int | str = "auto", regression: str = "c") -> KPSSResult:
    """KPSS statistic with a Bartlett-kernel long-run variance.

    ``regression="c"`` tests level stationarity, ``"ct"`` trend stationarity.
    """
    y = np.asarray(series, dtype=float)
    n = len(y)
    if n < 10:
        raise ValueError("KPSS needs at least 10 observations")
    if regression not in CRITICAL_5PCT:
        raise ValueError("regression must be 'c' or 'ct'")
    nlags = default_lags(n) if lags == "auto" else int(lags)
    if regression == "c":
        e = y - y.mean()
    else:
        t = np.arange(n, dtype=float)
        X = np.column_stack([np.ones(n), t])
        e = y - X @ np.linalg.lstsq(X, y, rcond=None)[0]
    scale = max(np.max(np.abs(y)), 1.0)
    if np.max(np.abs(e)) <= 1e-12 * scale:
        return KPSSResult(0.0, nlags, CRITICAL_5PCT[regression])
    S = np.cumsum(e)
    lrv = e @ e / n
    for s in range(1, nlags + 1):
        lrv += 2 * (1 - s / (nlags + 1)) * (e[s:] @ e[:-s]) / n
    stat = float(S @ S / (n * n * lrv))
    return KPSSResult(stat, nlags, CRITICAL_5PCT[regression])


def select_d(series, max_d: int = 2) -> int:
    """Difference until the first KPSS non-rejection, at most ``max_d`` times."""
    y = np.asarray(series, dtype=float)
    for d in range(max_d + 1):
        w = np.diff(y, d) if d else y
        if len(w) < 10:
            return max(d - 1, 0)
        if not kpss_statistic(w).reject_at_5pct:
            return d
    return max_d
