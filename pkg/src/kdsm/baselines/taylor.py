"""Second-order Taylor approximation of the denoising score-matching loss.

For ``l = log p`` and small isotropic noise ``sigma``,

    E_eps[dl(x+eps) + 0.5 |grad l(x+eps)|^2]
        ~ dl + 0.5 |grad l|^2 + (sigma^2 / 2) [d^2 l + |hess l|_F^2 + grad l . grad dl]

where ``d`` is the Laplacian.  With ``f = phi^T b`` every term is at most
quadratic in ``b``, so the approximate loss is ``0.5 b^T A b + c^T b + const``.
The base density enters through its local score and Hessian (its own third and
fourth derivatives are taken as zero, exact for a Gaussian ``q0``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..base_density import BaseDensity
from ..convolution import _quad_forms
from ..errors import InvalidSpecError, SingularSystemError
from ..features import FeatureMap, _check_X, eval_batch, partial, projections
from ..solver import Coefficients


@dataclass(frozen=True)
class TaylorSystem:
    A: np.ndarray
    c: np.ndarray
    const: float
    sigma: float

    def loss(self, b) -> float:
        b = np.asarray(b, dtype=float)
        return float(0.5 * b @ self.A @ b + self.c @ b + self.const)


def _q0_terms(q0, X):
    n, d = X.shape
    if q0 is None or q0.kind == "uniform_box":
        return np.zeros((n, d)), np.zeros((n, d, d))
    return q0.grad(X), q0.hess(X)


def taylor_system(fmap: FeatureMap, X, q0: BaseDensity | None, sigma: float) -> TaylorSystem:
    """Assemble ``A``, ``c`` and the coefficient-free part (per-point averages)."""
    if fmap.family != "rbf":
        raise InvalidSpecError("Taylor approximation needs rbf features")
    X = _check_X(fmap, X)
    n = X.shape[0]
    s2 = float(sigma) ** 2
    W = fmap.W
    cs = fmap.scale
    WW = W @ W.T
    sq = np.diag(WW)
    U = projections(fmap, X)
    C, S = np.cos(U), np.sin(U)
    g, Q = _q0_terms(q0, X)

    StS = S.T @ S / n
    base = cs * cs * WW * StS
    hess_sq = cs * cs * WW**2 * (C.T @ C / n)
    # sum_i d_i phi_k d_i lap(phi_l)
    grad_gradlap = -cs * cs * WW * StS * sq[None, :]
    A = base + s2 * hess_sq + 0.5 * s2 * (grad_gradlap + grad_gradlap.T)

    wg = g @ W.T  # (n, M)
    wQw = _quad_forms(Q, W)
    lin = -cs * sq * C - cs * S * wg
    lin = lin + 0.5 * s2 * (cs * sq**2 * C - 2.0 * cs * C * wQw + cs * sq * S * wg)
    c = lin.mean(axis=0)

    lap_q0 = np.trace(Q, axis1=1, axis2=2)
    const = float(np.mean(lap_q0 + 0.5 * np.sum(g * g, axis=1) + 0.5 * s2 * np.sum(Q * Q, axis=(1, 2))))
    return TaylorSystem(0.5 * (A + A.T), c, const, float(sigma))


def taylor_dsm_fit(fmap: FeatureMap, X, q0: BaseDensity | None, lam: float, sigma: float) -> Coefficients:
    """Minimize the Taylor loss plus ``(lam/2)|b|^2``.

    The ``sigma^2`` cross term can make ``A`` indefinite; a symmetric
    indefinite solve is used when the Cholesky factorization fails.
    """
    if not lam > 0:
        raise InvalidSpecError("lambda must be > 0")
    system = taylor_system(fmap, X, q0, sigma)
    Areg = system.A + lam * np.eye(system.A.shape[0])
    try:
        b = linalg.cho_solve(linalg.cho_factor(Areg), -system.c)
    except linalg.LinAlgError:
        try:
            b = linalg.solve(Areg, -system.c, assume_a="sym")
        except linalg.LinAlgError as exc:
            raise SingularSystemError("Taylor system is singular") from exc
    res = float(np.linalg.norm(Areg @ b + system.c) / max(np.linalg.norm(system.c), 1e-300))
    return Coefficients(b, "taylor", res)


def taylor_loss_direct(fmap: FeatureMap, X, q0: BaseDensity | None, sigma: float, b) -> float:
    """The same approximate loss evaluated pointwise from mixed partial derivatives of ``f``."""
    X = _check_X(fmap, X)
    n, d = X.shape
    b = np.asarray(b, dtype=float)
    eye = np.eye(d, dtype=int)

    def D(alpha):
        return partial(fmap, X, alpha) @ b

    grad = np.column_stack([D(eye[i]) for i in range(d)])
    hess = np.stack([np.column_stack([D(eye[i] + eye[j]) for j in range(d)]) for i in range(d)], axis=1)
    grad_lap = np.column_stack([sum(D(eye[i] + 2 * eye[j]) for j in range(d)) for i in range(d)])
    bilap = sum(D(2 * eye[i] + 2 * eye[j]) for i in range(d) for j in range(d))
    g, Q = _q0_terms(q0, X)
    gl = grad + g
    hl = hess + Q
    lap = np.trace(hl, axis1=1, axis2=2)
    s2 = float(sigma) ** 2
    per = lap + 0.5 * np.sum(gl * gl, axis=1)
    per = per + 0.5 * s2 * (bilap + np.sum(hl * hl, axis=(1, 2)) + np.sum(gl * grad_lap, axis=1))
    return float(per.mean())


def mc_dsm_loss(fmap: FeatureMap, X, q0: BaseDensity | None, sigma: float, b, K: int = 10_000, seed=None, chunk: int = 200_000):
    """Monte-Carlo denoising loss ``mean_a E[dl + 0.5 |grad l|^2](x_a + eps)`` and its standard error.

    Every data point receives its own noise draw in each of the ``K`` replicates.
    """
    X = _check_X(fmap, X)
    n, d = X.shape
    b = np.asarray(b, dtype=float)
    rng = np.random.default_rng(seed)
    step = max(1, chunk // n)
    vals = []
    done = 0
    while done < K:
        k = min(step, K - done)
        Xn = (X[None] + sigma * rng.standard_normal((k, n, d))).reshape(-1, d)
        batch = eval_batch(fmap, Xn)
        grad = (batch.dPhi @ b).reshape(-1, d)
        lap = (batch.d2Phi @ b).reshape(-1, d).sum(axis=1)
        g, Q = _q0_terms(q0, Xn)
        grad = grad + g
        lap = lap + np.trace(Q, axis1=1, axis2=2)
        per = lap + 0.5 * np.sum(grad * grad, axis=1)
        vals.append(per.reshape(k, n).mean(axis=1))
        done += k
    v = np.concatenate(vals)
    se = float(v.std(ddof=1) / np.sqrt(K)) if K > 1 else float("inf")
    return float(v.mean()), se
