"""Graph surrogate models for particle impact responses.

Builds a k-nearest-neighbour graph over process-condition samples, trains
GraphSAGE, Chebyshev spectral, TDA-augmented MLP and graph attention
regressors with exact reverse-mode gradients, and scores them with MSE,
MAE and R^2.
"""

__version__ = "0.1.0"

from .estimator import GraphRegressor
from .exceptions import ImpactGraphError, NumericalError, ValidationError
from .models import FAMILIES
from .oracle import OracleConfig, generate, respond
from .dataset import FEATURES, TARGETS, load_csv, records_to_arrays, split_masks

__all__ = [
    "FAMILIES",
    "FEATURES",
    "TARGETS",
    "GraphRegressor",
    "ImpactGraphError",
    "NumericalError",
    "OracleConfig",
    "ValidationError",
    "__version__",
    "generate",
    "load_csv",
    "records_to_arrays",
    "respond",
    "split_masks",
]
