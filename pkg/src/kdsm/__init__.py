"""Kernel exponential family density estimation by (denoising) score matching with random features."""

from .base_density import BaseDensity, em_gmm, fit_q0
from .convolution import ConvolvedSystem, NoiseSpec, build_system, mc_convolved_system
from .errors import (
    DimensionMismatchError,
    EstimationError,
    InvalidSpecError,
    KdsmError,
    SingularSystemError,
    StuckChainError,
    UnsupportedError,
)
from .features import FeatureMap, KernelSpec, eval_batch, features, partial, sample_feature_map
from .model import DensityModel
from .solver import Coefficients, FitConfig, fit_dsm, fit_finite_K, fit_sm

__version__ = "0.1.0"

__all__ = [
    "BaseDensity",
    "Coefficients",
    "ConvolvedSystem",
    "DensityModel",
    "DimensionMismatchError",
    "EstimationError",
    "FeatureMap",
    "FitConfig",
    "InvalidSpecError",
    "KdsmError",
    "KernelSpec",
    "NoiseSpec",
    "SingularSystemError",
    "StuckChainError",
    "UnsupportedError",
    "build_system",
    "em_gmm",
    "eval_batch",
    "features",
    "fit_dsm",
    "fit_finite_K",
    "fit_q0",
    "fit_sm",
    "mc_convolved_system",
    "partial",
    "sample_feature_map",
]
