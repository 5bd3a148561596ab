"""Univariate engines for forecasting principal component scores."""

from .arfima import ArfimaModel, fit_arfima, gph_estimate
from .arima import ArimaModel, auto_arima, fit_arima
from .base import ScoreForecast, TsFitError, TsModel, psi_weights
from .kpss import KPSSResult, kpss_statistic, select_d
from .simple import AR1Model, RandomWalkDrift, fit_ar1, fit_rwd


def forecast(model: TsModel, H: int) -> ScoreForecast:
    """Point forecasts and standard errors for any fitted model."""
    return model.forecast(H)


SCORE_MODELS = {
    "arima": auto_arima,
    "auto_arima": auto_arima,
    "rwf": fit_rwd,
    "rwd": fit_rwd,
    "ar1": fit_ar1,
    "arfima": fit_arfima,
}


def fit_score_model(series, kind: str) -> TsModel:
    try:
        fit = SCORE_MODELS[kind]
    except KeyError:
        raise ValueError(f"unknown score model {kind!r}; choose from {sorted(SCORE_MODELS)}") from None
    return fit(series)


__all__ = [
    "AR1Model", "ArfimaModel", "ArimaModel", "KPSSResult", "RandomWalkDrift", "ScoreForecast",
    "SCORE_MODELS", "TsFitError", "TsModel", "auto_arima", "fit_ar1", "fit_arfima", "fit_arima",
    "fit_rwd", "fit_score_model", "forecast", "gph_estimate", "kpss_statistic", "psi_weights",
    "select_d",
]
