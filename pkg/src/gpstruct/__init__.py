"""Bayesian inference over compositional GP kernel structures for 1-D time series."""

from .errors import (
    ConfigError,
    DataError,
    DegeneratePopulationError,
    KernelSyntaxError,
    NumericalDegeneracyError,
    StructureError,
    UnknownKernelError,
)
from .gp import AffineTransform, Dataset, GaussianPrediction, log_marginal, posterior_predictive
from .kernels import BaseKind, HyperParams, Leaf, Product, Sum, parse, render
from .prior import PriorConfig, RuleProbs
from .smc import HMCConfig, Population, PredictiveMixture, SamplerConfig, predictive_mixture, run_sampler
from .greedy import GreedyConfig, GreedyResult, greedy_search
from .config import RunConfig, run_config_from_json
from .runs import run_fit, run_greedy

__all__ = [
    "AffineTransform",
    "BaseKind",
    "ConfigError",
    "DataError",
    "Dataset",
    "DegeneratePopulationError",
    "GaussianPrediction",
    "GreedyConfig",
    "GreedyResult",
    "HMCConfig",
    "HyperParams",
    "KernelSyntaxError",
    "Leaf",
    "NumericalDegeneracyError",
    "Population",
    "PredictiveMixture",
    "PriorConfig",
    "Product",
    "RuleProbs",
    "RunConfig",
    "SamplerConfig",
    "StructureError",
    "Sum",
    "UnknownKernelError",
    "greedy_search",
    "log_marginal",
    "parse",
    "posterior_predictive",
    "predictive_mixture",
    "render",
    "run_config_from_json",
    "run_fit",
    "run_greedy",
    "run_sampler",
]

__version__ = "0.1.0"
