"""Causal spatial quantile regression with spline-mixture density networks."""

__version__ = "0.1.0"

from .causal import AdjustmentConfig, SqteSurface, bootstrap_ci, estimate_surface, neighborhood_adjusted_fit, sqte_at_location
from .data import Observations, read_csv
from .estimator import SpatialQuantileRegressor
from .exceptions import (
    CompatibilityError,
    ConfigurationError,
    CsqrError,
    DivergedTrainingError,
    InsufficientDataError,
    NumericError,
    SchemaError,
    ShapeError,
    UnsupportedOperationError,
)
from .network import QuantileModel, TrainConfig, train
from .quantiles import cdf, pdf, quantile
from .simulate import ScenarioSpec, generate, true_quantile, true_sqte
from .spatial import FeatureSpec, SpatialBasisTransformer, variant_spec
from .splines import build_grid, eval_i, eval_m

__all__ = [
    "AdjustmentConfig",
    "CompatibilityError",
    "ConfigurationError",
    "CsqrError",
    "DivergedTrainingError",
    "FeatureSpec",
    "InsufficientDataError",
    "NumericError",
    "Observations",
    "QuantileModel",
    "ScenarioSpec",
    "SchemaError",
    "ShapeError",
    "SpatialBasisTransformer",
    "SpatialQuantileRegressor",
    "SqteSurface",
    "TrainConfig",
    "UnsupportedOperationError",
    "bootstrap_ci",
    "build_grid",
    "cdf",
    "estimate_surface",
    "eval_i",
    "eval_m",
    "generate",
    "neighborhood_adjusted_fit",
    "pdf",
    "quantile",
    "read_csv",
    "sqte_at_location",
    "train",
    "true_quantile",
    "true_sqte",
    "variant_spec",
]
