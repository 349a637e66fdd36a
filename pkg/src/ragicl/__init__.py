"""Retrieval-augmented in-context linear regression: closed-form losses and Monte Carlo checks."""

__version__ = "0.1.0"

from .analytic import (  # noqa: E402
    LossBreakdown,
    isotropic_bias_limit,
    isotropic_loss,
    optimal_n,
    population_loss_uniform,
    regime_loss,
)
from .config import (  # noqa: E402
    ConfigError,
    DistanceProportional,
    ExperimentConfig,
    Mixture,
    TaskVector,
    Uniform,
    WeightMatrix,
    derive_stream,
    loads_config,
    validate,
)
from .montecarlo import empirical_argmin_n, estimate_components, estimate_loss  # noqa: E402
from .predictor import adapt_weight, optimal_pretrained_weight, predict, pretrained_weight  # noqa: E402

__all__ = [
    "ConfigError", "DistanceProportional", "ExperimentConfig", "LossBreakdown", "Mixture",
    "TaskVector", "Uniform", "WeightMatrix", "adapt_weight", "derive_stream", "empirical_argmin_n",
    "estimate_components", "estimate_loss", "isotropic_bias_limit", "isotropic_loss", "loads_config",
    "optimal_n", "optimal_pretrained_weight", "population_loss_uniform", "predict",
    "pretrained_weight", "regime_loss", "validate",
]
