"""Sparse covariate selection for the Poisson log-normal model with a
smooth L0 (SIC) penalty."""

__version__ = "0.1.0"

from .exceptions import DataError, NumericError, QuadratureError, SicplnError
from .fit import FitOptions, FitResult, pln_fit, sicpln_fit
from .metrics import BenchRecord, estimation_error, prediction_mse, tnr
from .model import (
    CountDataset,
    ModelParams,
    VariationalParams,
    elbo,
    predict_marginal,
    predict_variational,
)
from .penalty import PenaltyConfig, PriorSpec, phi, threshold_sic
from .simulate import SimScenario, gen_counts

__all__ = [
    "BenchRecord",
    "CountDataset",
    "DataError",
    "FitOptions",
    "FitResult",
    "ModelParams",
    "NumericError",
    "PenaltyConfig",
    "PriorSpec",
    "QuadratureError",
    "SicplnError",
    "SimScenario",
    "VariationalParams",
    "elbo",
    "estimation_error",
    "gen_counts",
    "phi",
    "pln_fit",
    "predict_marginal",
    "predict_variational",
    "prediction_mse",
    "sicpln_fit",
    "threshold_sic",
    "tnr",
]
