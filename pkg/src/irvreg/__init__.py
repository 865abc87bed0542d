"""Homography-based infrared/visible image registration toolkit."""

from . import (
    correlation,
    coupling,
    dataset,
    errors,
    estimator,
    features,
    geometry,
    imaging,
    metrics,
)
from .estimator import (
    EstimatorConfig,
    RegistrationResult,
    fit_homography_robust,
    register_hierarchical,
)
from .metrics import MetricReport, evaluate_pair

__version__ = "0.1.0"

__all__ = [
    "EstimatorConfig",
    "MetricReport",
    "RegistrationResult",
    "correlation",
    "coupling",
    "dataset",
    "errors",
    "estimator",
    "evaluate_pair",
    "features",
    "fit_homography_robust",
    "geometry",
    "imaging",
    "metrics",
    "register_hierarchical",
]
