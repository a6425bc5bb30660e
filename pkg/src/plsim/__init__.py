"""Partial-linear single-index regression ``y = Z @ theta + g(X @ beta) + e``."""

from .estimation import Dataset, FitConfig, ModelFit, fit
from .estimator import PartialLinearSingleIndexRegressor
from .sir import Direction, SlicedInverseRegression, sir_direction
from .smoothing import Bandwidths, Kernel

__all__ = [
    "Bandwidths",
    "Dataset",
    "Direction",
    "FitConfig",
    "Kernel",
    "ModelFit",
    "PartialLinearSingleIndexRegressor",
    "SlicedInverseRegression",
    "fit",
    "sir_direction",
]

__version__ = "0.1.0"
