"""Generating densities q0: uniform box, Gaussian, Gaussian mixture.

Each density exposes vectorized ``logpdf``, ``grad`` (score) and ``hess``
(Hessian of the log-density) on an ``(n, d)`` batch.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import InvalidSpecError

log = logging.getLogger(__name__)

Kind = Literal["uniform_box", "gaussian", "gmm"]
_LOG2PI = np.log(2.0 * np.pi)


def _as_batch(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != d:
        raise InvalidSpecError(f"expected {d} columns, got {X.shape[1]}")
    return X


def _chol(S: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(S, lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidSpecError("covariance is not positive definite") from exc


@dataclass(frozen=True)
class BaseDensity:
    """A fitted generating density.

    For ``uniform_box`` only ``lower``/``upper`` are set; for ``gaussian`` a
    single component is stored in ``means``/``covs`` with weight 1.
    """

    kind: Kind
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    weights: np.ndarray | None = None
    means: np.ndarray | None = None
    covs: np.ndarray | None = None
    _chols: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "uniform_box":
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or lo.ndim != 1 or not np.all(lo < hi):
                raise InvalidSpecError("uniform box needs lower < upper in every dimension")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
            return
        if self.kind not in ("gaussian", "gmm"):
            raise InvalidSpecError(f"unknown base density kind {self.kind!r}")
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        k, d = means.shape
        weights = np.ones(1) if self.weights is None else np.asarray(self.weights, dtype=float)
        if covs.shape != (k, d, d) or weights.shape != (k,):
            raise InvalidSpecError("inconsistent mixture parameter shapes")
        if self.kind == "gaussian" and k != 1:
            raise InvalidSpecError("gaussian base density has exactly one component")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidSpecError("mixture weights must lie on the simplex")
        chols = tuple(_chol(C) for C in covs)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_chols", chols)

    @classmethod
    def uniform(cls, lower, upper) -> "BaseDensity":
        return cls("uniform_box", lower=lower, upper=upper)

    @classmethod
    def gaussian(cls, mean, cov) -> "BaseDensity":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls("gaussian", weights=np.ones(1), means=mean[None], covs=cov[None])

    @classmethod
    def mixture(cls, weights, means, covs) -> "BaseDensity":
        return cls("gmm", weights=weights, means=means, covs=covs)

    @property
    def d(self) -> int:
        return self.lower.size if self.kind == "uniform_box" else self.means.shape[1]

    @property
    def normalizable(self) -> bool:
        """Whether importance-sampling normalization is available."""
        return self.kind != "uniform_box"

    # ----------------------------------------------------------------- eval

    def _component_terms(self, X):
        """Per-component log-densities (n, k) and scores -S^{-1}(x - mu) (k, n, d)."""
        k = self.means.shape[0]
        logs = np.empty((X.shape[0], k))
        scores = np.empty((k,) + X.shape)
        for c in range(k):
            L = self._chols[c]
            diff = X - self.means[c]
            z = linalg.solve_triangular(L, diff.T, lower=True)
            logs[:, c] = (
                np.log(self.weights[c])
                - 0.5 * np.sum(z * z, axis=0)
                - np.sum(np.log(np.diag(L)))
                - 0.5 * self.d * _LOG2PI
            )
            scores[c] = -linalg.solve_triangular(L.T, z, lower=False).T
        return logs, scores

    def inside(self, X) -> np.ndarray:
        X = _as_batch(X, self.d)
        if self.kind != "uniform_box":
            return np.ones(X.shape[0], dtype=bool)
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    def logpdf(self, X) -> np.ndarray:
        X = _as_batch(X, self.d)
        if self.kind == "uniform_box":
            val = -np.sum(np.log(self.upper - self.lower))
            return np.where(self.inside(X), val, -np.inf)
        logs, _ = self._component_terms(X)
        return logsumexp(logs, axis=1)

    def grad(self, X) -> np.ndarray:
        """Score ``grad log q0`` per row; zero for the uniform box (also outside)."""
        X = _as_batch(X, self.d)
        if self.kind == "uniform_box":
            return np.zeros_like(X)
        logs, scores = self._component_terms(X)
        resp = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        return np.einsum("nk,knd->nd", resp, scores)

    def hess(self, X) -> np.ndarray:
        """Hessian of ``log q0`` per row, shape (n, d, d)."""
        X = _as_batch(X, self.d)
        n, d = X.shape
        if self.kind == "uniform_box":
            return np.zeros((n, d, d))
        logs, scores = self._component_terms(X)
        resp = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        precs = np.stack([linalg.cho_solve((L, True), np.eye(d)) for L in self._chols])
        g = np.einsum("nk,knd->nd", resp, scores)
        second = np.einsum("nk,kni,knj->nij", resp, scores, scores)
        return -np.einsum("nk,kij->nij", resp, precs) + second - g[:, :, None] * g[:, None, :]

    def laplacian(self, X) -> np.ndarray:
        return np.trace(self.hess(X), axis1=1, axis2=2)

    def logpdf_grad_hess(self, x):
        """``(log q0(x), grad log q0(x), hess log q0(x))`` at a single point."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.logpdf(x)[0], self.grad(x)[0], self.hess(x)[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform_box":
            return rng.uniform(self.lower, self.upper, size=(n, self.d))
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        Z = rng.standard_normal((n, self.d))
        out = np.empty((n, self.d))
        for c in range(self.weights.size):
            idx = comp == c
            out[idx] = self.means[c] + Z[idx] @ self._chols[c].T
        return out

    # --------------------------------------------------------- persistence

    def to_dict(self) -> dict:
        if self.kind == "uniform_box":
            return {"kind": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BaseDensity":
        if data["kind"] == "uniform_box":
            return cls.uniform(data["lower"], data["upper"])
        return cls(
            data["kind"],
            weights=np.asarray(data["weights"]),
            means=np.asarray(data["means"]),
            covs=np.asarray(data["covs"]),
        )


# ---------------------------------------------------------------- fitting


@dataclass
class EMResult:
    density: BaseDensity
    loglik_trace: list[float]
    converged: bool


def _jittered_cov(X: np.ndarray) -> np.ndarray:
    d = X.shape[1]
    cov = np.atleast_2d(np.cov(X, rowvar=False, bias=False))
    var = np.diag(cov)
    if np.any(var <= 1e-12 * max(1.0, float(np.max(var)) if var.size else 1.0)):
        warnings.warn("degenerate data: zero variance dimension; covariance jittered", RuntimeWarning)
        cov = cov + np.eye(d) * 1e-6 * max(1.0, float(np.trace(cov)))
    return cov + np.eye(d) * 1e-6 * np.trace(cov) / d


def _init_means(X, k, rng):
    """k-means++ style seeding."""
    n = X.shape[0]
    means = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.asarray(means)[None]) ** 2).sum(-1), axis=1)
        tot = d2.sum()
        p = d2 / tot if tot > 0 else np.full(n, 1.0 / n)
        means.append(X[rng.choice(n, p=p)])
    return np.asarray(means)


def em_gmm(X, k: int, seed=None, tol: float = 1e-6, max_iter: int = 500, reg: float = 1e-6) -> EMResult:
    """Maximum-likelihood EM for a full-covariance Gaussian mixture.

    Stops when the mean log-likelihood improves by less than ``tol``.
    A component covariance is jittered by ``reg * trace`` only when it turns
    numerically singular, so ordinary iterations keep the monotone ascent.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    base_cov = _jittered_cov(X)
    means = _init_means(X, k, rng)
    covs = np.repeat(base_cov[None], k, axis=0)
    weights = np.full(k, 1.0 / k)
    trace: list[float] = []
    converged = False
    for _ in range(max_iter):
        dens = BaseDensity("gmm", weights=weights, means=means, covs=covs)
        logs, _ = dens._component_terms(X)
        ll = logsumexp(logs, axis=1)
        trace.append(float(ll.mean()))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
        resp = np.exp(logs - ll[:, None])
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = nk / n
        weights = weights / weights.sum()
        means = (resp.T @ X) / nk[:, None]
        covs = np.empty((k, d, d))
        for c in range(k):
            diff = X - means[c]
            C = (resp[:, c, None] * diff).T @ diff / nk[c]
            if np.linalg.eigvalsh(C)[0] <= 1e-10 * max(np.trace(C), 1e-300):
                C = C + reg * max(np.trace(base_cov), 1e-12) * np.eye(d)
            covs[c] = C
    dens = BaseDensity("gmm", weights=weights, means=means, covs=covs)
    return EMResult(dens, trace, converged)


def fit_q0(kind: Kind, X, k: int = 1, seed=None, margin: float = 0.05, restarts: int = 3) -> BaseDensity:
    """Fit a generating density to data.

    ``uniform_box`` takes the coordinate-wise range expanded by ``margin`` of
    its width on each side; ``gaussian`` uses the sample moments with a small
    trace jitter; ``gmm`` keeps the best of ``restarts`` seeded EM runs.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidSpecError("need at least two data rows")
    if kind == "uniform_box":
        lo, hi = X.min(axis=0), X.max(axis=0)
        width = hi - lo
        if np.any(width <= 0):
            warnings.warn("degenerate data: zero-width dimension; box widened", RuntimeWarning)
            width = np.where(width > 0, width, 1.0)
        return BaseDensity.uniform(lo - margin * width, hi + margin * width)
    if kind == "gaussian":
        return BaseDensity.gaussian(X.mean(axis=0), _jittered_cov(X))
    if kind == "gmm":
        if k < 1:
            raise InvalidSpecError("gmm needs k >= 1 components")
        seeds = np.random.SeedSequence(seed).spawn(restarts)
        best = None
        for ss in seeds:
            res = em_gmm(X, k, seed=ss)
            if best is None or res.loglik_trace[-1] > best.loglik_trace[-1]:
                best = res
        log.debug("gmm fit: final mean loglik %.6f", best.loglik_trace[-1])
        return best.density
    raise InvalidSpecError(f"unknown base density kind {kind!r}")
