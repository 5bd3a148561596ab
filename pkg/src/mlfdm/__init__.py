"""Coherent multi-population mortality forecasting with multilevel functional data models."""

from .data import (AgeGrid, DataError, HierarchyNode, MortalityDataset, PopulationLabel,
                   load_dataset, parse_hmd_table, read_canonical_csv, write_canonical_csv)
from .evaluate import BacktestPlan, EvaluationReport, evaluate, interval_score
from .fpca import MultilevelDecomposition, empirical_fpca, multilevel_decompose
from .kernels import BACKEND
from .lifetable import e0_distribution, life_expectancy, life_table
from .methods import BENCHMARK_METHODS, MethodSpec, fit_method, group_from_dataset
from .smooth import SmoothingError, smooth_dataset, smooth_year
from .ts import auto_arima, fit_score_model
from .uncertainty import GibbsConfig, run_gibbs, sample_posterior, simulate_paths

__version__ = "0.1.0"

__all__ = [
    "AgeGrid", "BACKEND", "BENCHMARK_METHODS", "BacktestPlan", "DataError", "EvaluationReport",
    "GibbsConfig", "HierarchyNode", "MethodSpec", "MortalityDataset", "MultilevelDecomposition",
    "PopulationLabel", "SmoothingError", "auto_arima", "e0_distribution", "empirical_fpca",
    "evaluate", "fit_method", "fit_score_model", "group_from_dataset", "interval_score",
    "life_expectancy", "life_table", "load_dataset", "multilevel_decompose", "parse_hmd_table",
    "read_canonical_csv", "run_gibbs", "sample_posterior", "simulate_paths", "smooth_dataset",
    "smooth_year", "write_canonical_csv",
]
