"""Bayesian order determination for stationary vector autoregressions."""
__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    decomposition_summary,
    effective_order,
    granger_edges,
    latent_decomposition,
    order_posterior,
    truncation_threshold,
)
from .diagnostics import diagnose  # noqa: E402
from .model import Dataset, LogPosterior, ModelConfig  # noqa: E402
from .nuts import SamplerConfig, sample  # noqa: E402
from .reparam import VarModel, a_to_pacf, pacf_to_a, pacf_to_var, var_to_pacf  # noqa: E402
from .sim import random_model, simulate  # noqa: E402

__all__ = [
    "Dataset", "LogPosterior", "ModelConfig", "SamplerConfig", "VarModel",
    "a_to_pacf", "pacf_to_a", "pacf_to_var", "var_to_pacf",
    "decomposition_summary", "diagnose", "effective_order", "granger_edges", "latent_decomposition",
    "order_posterior", "random_model", "sample", "simulate", "truncation_threshold",
]
