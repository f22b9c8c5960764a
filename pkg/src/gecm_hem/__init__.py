"""Sparse Bayesian regression with hyperbolic errors: ECM screening followed by Gibbs sampling."""

__version__ = "0.1.0"

from .data import Dataset, Standardizer, generate_scenario, load_csv, scenario_config, standardize
from .ecm import ETA_GRID, KAPPA0_GRID, HyperParams, run_ecm
from .estimator import GECMHEMRegressor, fit_pipeline
from .exceptions import DataError, NumericalError
from .gibbs import run_gibbs
from .inference import metrics, predict, summarize

__all__ = [
    "Dataset", "Standardizer", "generate_scenario", "load_csv", "scenario_config",
    "standardize", "ETA_GRID", "KAPPA0_GRID", "HyperParams", "run_ecm", "GECMHEMRegressor",
    "fit_pipeline", "DataError", "NumericalError", "run_gibbs", "metrics", "predict",
    "summarize",
]
