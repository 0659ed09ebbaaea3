"""Competing estimators used for benchmarking."""

from .exact import ExactKernelModel, fit_exact_kernel
from .nystrom import NystromModel, fit_nystrom, mc_nystrom_system, nystrom_system
from .taylor import TaylorSystem, mc_dsm_loss, taylor_dsm_fit, taylor_loss_direct, taylor_system

__all__ = [
    "ExactKernelModel",
    "NystromModel",
    "TaylorSystem",
    "fit_exact_kernel",
    "fit_nystrom",
    "mc_dsm_loss",
    "mc_nystrom_system",
    "nystrom_system",
    "taylor_dsm_fit",
    "taylor_loss_direct",
    "taylor_system",
]
