"""Closed-form coefficient solvers for the (denoising) score-matching fit."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg

from .base_density import BaseDensity
from .convolution import ConvolvedSystem, NoiseSpec, build_system, mc_convolved_system
from .errors import InvalidSpecError, SingularSystemError
from .features import FeatureMap

log = logging.getLogger(__name__)

Provenance = Literal["dsm_closed_form", "sm_plain", "finite_K", "nystrom", "taylor"]


@dataclass(frozen=True)
class FitConfig:
    lam: float
    noise: NoiseSpec = NoiseSpec(0.0)
    jitter: float | None = None  # default 1e-10 * trace(H) / M

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvalidSpecError(f"lambda must be > 0, got {self.lam}")
        if not isinstance(self.noise, NoiseSpec):
            object.__setattr__(self, "noise", NoiseSpec(float(self.noise)))
        if self.jitter is not None and self.jitter < 0:
            raise InvalidSpecError("jitter must be >= 0")


@dataclass(frozen=True)
class Coefficients:
    b: np.ndarray
    provenance: Provenance = "dsm_closed_form"
    residual: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if not np.all(np.isfinite(b)):
            raise SingularSystemError("coefficients are not finite")
        object.__setattr__(self, "b", b)


def default_jitter(H: np.ndarray) -> float:
    return 1e-10 * float(np.trace(H)) / H.shape[0]


def spd_factor(A: np.ndarray, jitter: float, escalations: int = 3):
    """Cholesky of ``A + jitter I``; on failure multiply the jitter by 10 (up to ``escalations`` times)."""
    eye = np.eye(A.shape[0])
    jit = jitter
    for attempt in range(escalations + 1):
        try:
            return linalg.cho_factor(A + jit * eye, lower=True, check_finite=True), jit
        except (linalg.LinAlgError, ValueError):
            log.debug("cholesky failed with jitter %.3g (attempt %d)", jit, attempt)
            jit = max(jit * 10.0, np.finfo(float).eps * max(1.0, np.abs(np.diag(A)).max()))
    raise SingularSystemError(f"matrix not positive definite after {escalations} jitter escalations")


def fit_dsm(system: ConvolvedSystem, cfg: FitConfig, provenance: Provenance = "dsm_closed_form") -> Coefficients:
    """Coefficients ``b = (1/lam) [(H + n lam I)^{-1} H h - h]``.

    Evaluated as the algebraically identical ``b = -n (H + n lam I)^{-1} h``,
    which avoids cancelling two nearly equal terms when ``n lam`` is small.
    """
    if not np.isclose(system.sigma, cfg.noise.sigma, rtol=0, atol=1e-15):
        raise InvalidSpecError("system was built with a different noise level")
    H, h, n = system.H, system.h, system.n
    jitter = default_jitter(H) if cfg.jitter is None else cfg.jitter
    A = H + n * cfg.lam * np.eye(H.shape[0])
    cf, _ = spd_factor(A, jitter)
    b = -n * linalg.cho_solve(cf, h)
    # residual of (H + n lam I) x = H h with x = h + lam b
    x = h + cfg.lam * b
    Hh = H @ h
    res = float(np.linalg.norm(A @ x - Hh))
    scale = float(np.linalg.norm(Hh))
    rel = res / scale if scale > 0 else res
    return Coefficients(b, provenance, rel)


def fit_finite_K(
    fmap: FeatureMap,
    X,
    noise,
    q0: BaseDensity | None,
    cfg: FitConfig,
    K: int,
    seed=None,
) -> Coefficients:
    """Finite-K discretization of the noise integral.

    The noise convolution inside the inverted operator is replaced by ``K``
    Monte-Carlo draws (``H_K``) while the outer ``H`` and ``h`` stay exact:

        f_K = (1/(n lam^2)) phi^T H [h - (H_K + n lam I)^{-1} H_K h] - (1/lam) phi^T h
            = (1/lam) phi^T [H (H_K + n lam I)^{-1} - I] h

    which tends to the closed form as ``K -> infinity`` and equals it when
    ``H_K = H``.
    """
    noise = noise if isinstance(noise, NoiseSpec) else NoiseSpec(float(noise))
    exact = build_system(fmap, X, noise, q0)
    if noise.sigma == 0.0:
        HK = exact.H
    else:
        HK = mc_convolved_system(fmap, X, noise, q0, K=K, seed=seed).H
    H, h, n = exact.H, exact.h, exact.n
    jitter = default_jitter(H) if cfg.jitter is None else cfg.jitter
    cf, _ = spd_factor(HK + n * cfg.lam * np.eye(H.shape[0]), jitter)
    y = linalg.cho_solve(cf, h)
    # (1/lam) [H y - h] = (1/lam) (H - H_K) y - n y
    b = (H - HK) @ y / cfg.lam - n * y
    return Coefficients(b, "finite_K")


def fit_sm(fmap: FeatureMap, X, q0: BaseDensity | None, cfg: FitConfig) -> Coefficients:
    """Plain score matching: the closed form at zero noise."""
    zero = NoiseSpec(0.0)
    system = build_system(fmap, X, zero, q0)
    return fit_dsm(system, FitConfig(cfg.lam, zero, cfg.jitter), provenance="sm_plain")
