"""Fitted kernel exponential family density ``log p(x) = phi(x)^T b + log q0(x) - log Z``."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .base_density import BaseDensity
from .errors import DimensionMismatchError, EstimationError, UnsupportedError
from .features import FeatureMap, eval_batch, features
from .solver import Coefficients


@dataclass(frozen=True)
class SMLoss:
    """Sample score-matching loss split into its parts.

    ``total = second_derivative + quadratic + cross + base`` where ``base``
    collects the coefficient-free ``q0`` terms.
    """

    total: float
    second_derivative: float
    quadratic: float
    cross: float
    base: float


@dataclass(frozen=True)
class DensityModel:
    """Unnormalized (or IS-normalized) density on raw data coordinates.

    ``shift``/``scale`` optionally standardize inputs: the model lives on
    ``z = (x - shift) / scale`` and every evaluation applies the change of
    variables back to ``x``.
    """

    coeffs: Coefficients
    fmap: FeatureMap
    q0: BaseDensity
    log_Z: float | None = None
    log_Z_se: float | None = None
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.fmap.M != self.coeffs.b.size:
            raise DimensionMismatchError("coefficient count differs from feature count")
        if self.fmap.d != self.q0.d:
            raise DimensionMismatchError("feature map and q0 dimensions differ")
        if self.log_Z is not None and not self.q0.normalizable:
            raise UnsupportedError("normalizer is unavailable for a uniform base density")

    @property
    def d(self) -> int:
        return self.fmap.d

    @property
    def b(self) -> np.ndarray:
        return self.coeffs.b

    def _z(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.d:
            raise DimensionMismatchError(f"expected {self.d} columns, got {X.shape[1]}")
        if self.shift is None:
            return X
        return (X - self.shift) / self.scale

    def _inv_scale(self) -> np.ndarray:
        return np.ones(self.d) if self.scale is None else 1.0 / np.asarray(self.scale)

    def _log_jacobian(self) -> float:
        return 0.0 if self.scale is None else -float(np.sum(np.log(self.scale)))

    def f(self, X) -> np.ndarray:
        """Natural parameter ``phi(z)^T b`` (no q0, no normalizer)."""
        return features(self.fmap, self._z(X)) @ self.b

    def log_density(self, X, normalized: bool = False) -> np.ndarray:
        Z = self._z(X)
        val = features(self.fmap, Z) @ self.b + self.q0.logpdf(Z) + self._log_jacobian()
        if normalized:
            if self.log_Z is None:
                raise UnsupportedError("model has no normalizer; call with_normalizer() first")
            val = val - self.log_Z
        return val

    def score_and_laplacian(self, X) -> tuple[np.ndarray, np.ndarray]:
        """``grad log p`` per row (n, d) and ``laplace log p`` per row (n,)."""
        Z = self._z(X)
        n, d = Z.shape
        batch = eval_batch(self.fmap, Z)
        s = self._inv_scale()
        grad_z = (batch.dPhi @ self.b).reshape(n, d) + self.q0.grad(Z)
        lap_z = (batch.d2Phi @ self.b).reshape(n, d) + np.diagonal(self.q0.hess(Z), axis1=1, axis2=2)
        return grad_z * s, lap_z @ (s * s)

    def score(self, X) -> np.ndarray:
        return self.score_and_laplacian(X)[0]

    def logp_and_grad(self, X):
        """Unnormalized log-density and its gradient; the MALA target interface."""
        return self.log_density(X), self.score(X)

    # ------------------------------------------------------ normalization

    def estimate_log_Z(self, n_z: int = 10_000, seed=None, literal: bool = False) -> tuple[float, float]:
        """Importance-sampling estimate of ``log int q0 exp(f)`` and its standard error.

        Draws ``x_i ~ q0`` so the weights are ``exp(f(x_i))``; the log-mean is
        taken after subtracting the largest exponent.  ``literal=True`` returns
        the plain mean of ``f(x_i) / q0(x_i)`` instead (for comparison only; it
        is not a normalizer).
        """
        if not self.q0.normalizable:
            raise UnsupportedError("normalizer is unavailable for a uniform base density")
        if n_z < 1:
            raise EstimationError("n_z must be >= 1")
        rng = np.random.default_rng(seed)
        Zs = self.q0.sample(n_z, rng)
        fz = features(self.fmap, Zs) @ self.b
        if literal:
            r = fz / np.exp(self.q0.logpdf(Zs))
            return float(r.mean()), float(r.std(ddof=1) / np.sqrt(n_z)) if n_z > 1 else float("inf")
        return log_mean_exp(fz)

    def with_normalizer(self, n_z: int = 10_000, seed=None) -> "DensityModel":
        logz, se = self.estimate_log_Z(n_z, seed)
        return replace(self, log_Z=logz, log_Z_se=se)

    # ----------------------------------------------------------- losses

    def validation_sm_loss(self, X) -> SMLoss:
        """Sample score-matching loss ``mean[laplace log p + 0.5 |grad log p|^2]``.

        Computed from the feature derivative matrices in the quadratic form
        ``(1/|V|) [1^T d2Phi b + 0.5 b^T dPhi^T dPhi b + b^T dPhi^T g]`` plus the
        coefficient-free ``q0`` terms.
        """
        Z = self._z(X)
        n, d = Z.shape
        if n < 1:
            raise DimensionMismatchError("validation set is empty")
        s = self._inv_scale()
        batch = eval_batch(self.fmap, Z)
        rs = np.tile(s, n)[:, None]
        dPhi = batch.dPhi * rs
        d2Phi = batch.d2Phi * rs * rs
        g = (self.q0.grad(Z) * s).reshape(-1)
        lap_q0 = np.diagonal(self.q0.hess(Z), axis1=1, axis2=2) @ (s * s)
        db = dPhi @ self.b
        second = float(np.sum(d2Phi @ self.b)) / n
        quad = 0.5 * float(db @ db) / n
        cross = float(db @ g) / n
        base = float(np.mean(lap_q0) + 0.5 * np.sum(g * g) / n)
        return SMLoss(second + quad + cross + base, second, quad, cross, base)


def log_mean_exp(v: np.ndarray) -> tuple[float, float]:
    """``log(mean(exp(v)))`` with its delta-method standard error."""
    v = np.asarray(v, dtype=float)
    if v.size == 0 or not np.any(np.isfinite(v)) or np.all(v == -np.inf):
        raise EstimationError("all importance weights are zero or undefined")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise EstimationError("importance weights are not finite")
    n = v.size
    est = float(logsumexp(v) - np.log(n))
    w = np.exp(v - v.max())
    wbar = w.mean()
    se = float(w.std(ddof=1) / (np.sqrt(n) * wbar)) if n > 1 else float("inf")
    return est, se


def sm_loss_direct(model: DensityModel, X) -> float:
    """Same loss evaluated pointwise through ``score_and_laplacian``."""
    grad, lap = model.score_and_laplacian(X)
    return float(np.mean(lap + 0.5 * np.sum(grad * grad, axis=1)))
