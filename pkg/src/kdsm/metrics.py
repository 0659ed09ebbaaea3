"""Density-estimation quality metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .errors import DimensionMismatchError, InvalidSpecError

ScoreFn = Callable[[np.ndarray], np.ndarray]


def _as_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def fisher_divergence(model_score: ScoreFn, true_score: ScoreFn, X, support_mask=None) -> float:
    """``0.5 * mean |s_model(x) - s_true(x)|^2`` over the (masked) rows of ``X``."""
    X = _as_rows(X)
    if support_mask is not None:
        X = X[np.asarray(support_mask, dtype=bool)]
    if X.shape[0] == 0:
        raise InvalidSpecError("no evaluation points left after masking")
    diff = np.asarray(model_score(X)) - np.asarray(true_score(X))
    return float(0.5 * np.mean(np.sum(diff * diff, axis=1)))


def avg_log_likelihood(model, X) -> float:
    """Mean normalized log-density; raises if the model has no normalizer."""
    return float(np.mean(model.log_density(X, normalized=True)))


@dataclass(frozen=True)
class FssdResult:
    statistic: float
    p_value: float
    n_test_locations: int
    kernel_lengthscale: float
    n_bootstrap: int


def median_distance(X, max_rows: int = 1000, seed=None) -> float:
    X = _as_rows(X)
    if X.shape[0] > max_rows:
        rng = np.random.default_rng(seed)
        X = X[rng.choice(X.shape[0], size=max_rows, replace=False)]
    med = float(np.median(pdist(X)))
    return med if med > 0 else 1.0


def fssd_features(score: np.ndarray, X: np.ndarray, V: np.ndarray, ell: float) -> np.ndarray:
    """Stein features ``tau(x)`` of dimension ``d * J`` (Gaussian kernel, bandwidth ``ell``)."""
    n, d = X.shape
    J = V.shape[0]
    diff = X[:, None, :] - V[None, :, :]  # (n, J, d)
    k = np.exp(-0.5 * np.sum(diff * diff, axis=2) / ell**2)  # (n, J)
    xi = k[:, :, None] * (score[:, None, :] - diff / ell**2)
    return xi.reshape(n, J * d) / np.sqrt(d * J)


def fssd_test(score_fn: ScoreFn, X, J: int = 5, n_bootstrap: int = 1000, seed=None) -> FssdResult:
    """Finite-set Stein discrepancy goodness-of-fit test.

    The statistic is ``n`` times the unbiased estimate of FSSD^2; its null
    distribution is simulated with Rademacher multipliers.  Rows are sorted
    first so the result does not depend on their order.
    """
    X = _as_rows(X)
    n, d = X.shape
    if n < 10:
        raise InvalidSpecError("FSSD needs at least 10 rows")
    if n < J:
        raise InvalidSpecError("fewer rows than test locations")
    X = X[np.lexsort(X.T[::-1])]
    ss = np.random.SeedSequence(seed)
    loc_rng, bw_seed, boot_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    mu = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    V = loc_rng.multivariate_normal(mu, cov + 1e-12 * np.eye(d), size=J, method="cholesky")
    ell = median_distance(X, seed=bw_seed)
    score = np.asarray(score_fn(X), dtype=float).reshape(n, d)
    T = fssd_features(score, X, V, ell)
    total = T.sum(axis=0)
    diag = float(np.sum(T * T))
    stat = (float(total @ total) - diag) / (n - 1)
    E = boot_rng.choice(np.array([-1.0, 1.0]), size=(n_bootstrap, n))
    S = E @ T
    boot = (np.sum(S * S, axis=1) - diag) / (n - 1)
    p = (1.0 + np.sum(boot >= stat)) / (1.0 + n_bootstrap)
    return FssdResult(float(stat), float(p), J, ell, n_bootstrap)


def wasserstein1(A, B, seed=None, max_points: int = 2048) -> float:
    """Exact W1 between equal-size empirical sets via optimal assignment.

    Unequal or oversized sets are first subsampled (without replacement) to a
    common size of at most ``max_points``.
    """
    A = _as_rows(A)
    B = _as_rows(B)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise InvalidSpecError("sample sets must be non-empty")
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatchError("sample sets have different dimensions")
    m = min(A.shape[0], B.shape[0], max_points)
    if A.shape[0] != m or B.shape[0] != m:
        rng = np.random.default_rng(seed)
        if A.shape[0] > m:
            A = A[rng.choice(A.shape[0], size=m, replace=False)]
        if B.shape[0] > m:
            B = B[rng.choice(B.shape[0], size=m, replace=False)]
    C = cdist(A, B)
    r, c = linear_sum_assignment(C)
    # sorted so the float sum does not depend on argument order
    return float(np.sort(C[r, c]).mean())
