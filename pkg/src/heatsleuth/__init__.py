"""Reconstruction of heat-source supports on the unit disc from sparse
moving-sensor boundary-flux data."""

from .shapes import ShapeKind, ShapeParams, PriorSpec, to_physical, to_unconstrained
from .experiment import ExperimentConfig, run_experiment, validate_config

__version__ = "0.1.0"

__all__ = [
    "ShapeKind",
    "ShapeParams",
    "PriorSpec",
    "to_physical",
    "to_unconstrained",
    "ExperimentConfig",
    "run_experiment",
    "validate_config",
    "__version__",
]
