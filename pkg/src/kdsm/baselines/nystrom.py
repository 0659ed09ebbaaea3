"""Nyström score matching: ``f(x) = sum_m beta_m k(z_m, x)`` over inducing points.

With ``dK[(a,i), m] = d_i k(z_m, x_a)`` the (denoising) objective in ``beta`` is

    (1/n) 0.5 beta^T G beta + g^T beta + (lam/2) beta^T K11 beta,
    G = sum_a E[dK_a^T dK_a],   g = (1/n) sum_a E[sum_i d_i^2 K_a + d_i K_a d_i log q0],

so ``beta = -n (G + n lam K11)^{-1} g``.  For the Gaussian kernel the noise
expectations factor over coordinates and are computed in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..base_density import BaseDensity
from ..convolution import NoiseSpec, _as_noise
from ..errors import DimensionMismatchError, InvalidSpecError
from ..features import KernelSpec
from ..solver import spd_factor
from . import rbf_kernel as rk


@dataclass(frozen=True)
class NystromSystem:
    G: np.ndarray
    g: np.ndarray
    n: int
    sigma: float
    G_se: np.ndarray | None = None
    g_se: np.ndarray | None = None


@dataclass(frozen=True)
class NystromModel:
    Z: np.ndarray  # inducing points (M, d)
    index: np.ndarray  # their row indices in the training set
    spec: KernelSpec
    beta: np.ndarray
    K11_factor: tuple
    q0: BaseDensity | None
    lam: float
    sigma: float
    seed: int | None = None
    provenance: str = "nystrom"

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    @property
    def p(self) -> np.ndarray:
        return rk.precisions(self.spec.lengthscales, self.d)

    def _R(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.d:
            raise DimensionMismatchError(f"expected {self.d} columns")
        return X, X[:, None, :] - self.Z[None, :, :]

    def f(self, X) -> np.ndarray:
        _, R = self._R(X)
        return rk.k0(R, self.p) @ self.beta

    def grad_f(self, X) -> np.ndarray:
        _, R = self._R(X)
        return np.einsum("nmi,m->ni", rk.k1(R, self.p), self.beta)

    def lap_f(self, X) -> np.ndarray:
        _, R = self._R(X)
        return rk.lap(R, self.p) @ self.beta

    def log_density(self, X) -> np.ndarray:
        X, _ = self._R(X)
        out = self.f(X)
        return out if self.q0 is None else out + self.q0.logpdf(X)

    def score(self, X) -> np.ndarray:
        X, _ = self._R(X)
        out = self.grad_f(X)
        return out if self.q0 is None else out + self.q0.grad(X)

    def score_and_laplacian(self, X):
        X, _ = self._R(X)
        grad, lap = self.grad_f(X), self.lap_f(X)
        if self.q0 is not None and self.q0.kind != "uniform_box":
            grad = grad + self.q0.grad(X)
            lap = lap + self.q0.laplacian(X)
        return grad, lap

    def norm_sq(self) -> float:
        """RKHS norm ``beta^T K11 beta``."""
        L, lower = self.K11_factor
        v = (L.T if lower else L) @ self.beta
        return float(v @ v)


def _local_q0(q0, X):
    n, d = X.shape
    if q0 is None or q0.kind == "uniform_box":
        return np.zeros((n, d)), np.zeros((n, d, d))
    return q0.grad(X), q0.hess(X)


def _derivative_matrix(X, Z, p):
    """``dK`` (n*d, M), the Laplacian of each kernel column (n, M) and the raw gradients (n, M, d)."""
    R = X[:, None, :] - Z[None, :, :]
    K = rk.k0(R, p)
    dK = rk.k1(R, p, K).transpose(0, 2, 1).reshape(-1, Z.shape[0])
    return dK, rk.lap(R, p, K), rk.k1(R, p, K)


def nystrom_system(X, Z, spec: KernelSpec, noise, q0: BaseDensity | None = None, chunk: int | None = None) -> NystromSystem:
    """Closed-form ``G, g`` under isotropic Gaussian noise.

    Products of Gaussian kernels are Gaussian in ``y = x + eps``; integrating
    against ``N(x, sigma^2 I)`` leaves a Gaussian factor in ``x`` and moments
    of a tilted normal with mean ``m`` and variance ``v`` per coordinate.  A
    non-Gaussian ``q0`` score is linearized around each data point.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n, d = X.shape
    M = Z.shape[0]
    noise = _as_noise(noise)
    s = noise.sigma**2
    p = rk.precisions(spec.lengthscales, d)
    gq, Q = _local_q0(q0, X)

    if s == 0.0:
        dK, lapK, K1 = _derivative_matrix(X, Z, p)
        G = dK.T @ dK
        g = (lapK.sum(axis=0) + np.einsum("nmi,ni->m", K1, gq)) / n
        return NystromSystem(0.5 * (G + G.T), g, n, 0.0)

    # --- G: pairs of inducing points.  For each pair (m, l) the integrand is
    # exp(-0.5 sum_i q_i (x_i - c_i)^2) times a quadratic in x, with c the pair
    # midpoint; both reduce to GEMMs against the flattened pair table.
    P2 = 2.0 * p
    den = 1.0 + P2 * s
    q = P2 / den
    v2 = s / den
    pref = np.prod(den ** -0.5)
    C = (0.5 * (Z[:, None, :] + Z[None, :, :])).reshape(M * M, d)
    A = np.exp(-0.25 * np.sum(p * (Z[:, None, :] - Z[None, :, :]) ** 2, axis=-1)).reshape(M * M)
    shift = (P2 * s / den) * C
    beta = shift - np.repeat(Z, M, axis=0)  # m_i - z_mi without the x part
    gamma = shift - np.tile(Z, (M, 1))
    alpha = 1.0 / den
    r = (p**2 * alpha) * (beta + gamma)  # (M*M, d)
    t = np.sum(p**2 * (beta * gamma + v2), axis=1)
    cq = np.sum(C * C * q, axis=1)
    if chunk is None:
        chunk = max(1, int(4e6 // (M * M)))
    uF = np.zeros(M * M)
    XF = np.zeros((d, M * M))
    oneF = np.zeros(M * M)
    for start in range(0, n, chunk):
        Xc = X[start:start + chunk]
        E = -0.5 * (np.sum(Xc * Xc * q, axis=1)[:, None] - 2.0 * (Xc * q) @ C.T + cq[None, :])
        F = np.exp(np.minimum(E, 0.0))
        uF += np.sum(p**2 * alpha**2 * Xc * Xc, axis=1) @ F
        XF += Xc.T @ F
        oneF += F.sum(axis=0)
    G = (pref * A * (uF + np.sum(XF.T * r, axis=1) + t * oneF)).reshape(M, M)

    # --- g: single inducing points
    den1 = 1.0 + p * s
    v1 = s / den1
    R = X[:, None, :] - Z[None, :, :]
    F1 = np.prod(den1 ** -0.5) * np.exp(-0.5 * np.sum(p * R * R / den1, axis=-1))  # (n, M)
    M1 = (X[:, None, :] + (p * s) * Z[None]) / den1  # (n, M, d)
    Dz = M1 - Z[None]
    second = np.sum(p**2 * (Dz * Dz + v1) - p, axis=-1)
    # E[(y_i - z_i) (g_i + Q_i.(y - x))] under the tilted normal
    lin = gq[:, None, :] + np.einsum("nij,nmj->nmi", Q, M1 - X[:, None, :])
    Qdiag = np.diagonal(Q, axis1=1, axis2=2)[:, None, :]
    cross = -np.sum(p * (Dz * lin + Qdiag * v1), axis=-1)
    g = np.sum(F1 * (second + cross), axis=0) / n
    return NystromSystem(0.5 * (G + G.T), g, n, noise.sigma)


def mc_nystrom_system(X, Z, spec: KernelSpec, noise, q0: BaseDensity | None = None, K: int = 1000, seed=None) -> NystromSystem:
    """Monte-Carlo ``G, g`` from ``K`` shared noise draws, with standard errors."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n, d = X.shape
    M = Z.shape[0]
    noise = _as_noise(noise)
    p = rk.precisions(spec.lengthscales, d)
    rng = np.random.default_rng(seed)
    sG = np.zeros((M, M))
    sG2 = np.zeros((M, M))
    sg = np.zeros(M)
    sg2 = np.zeros(M)
    step = max(1, 4096 // n)
    done = 0
    while done < K:
        k = min(step, K - done)
        Xn = (X[None] + noise.sigma * rng.standard_normal((k, 1, d))).reshape(-1, d)
        R = Xn[:, None, :] - Z[None, :, :]
        Kv = rk.k0(R, p)
        K1 = rk.k1(R, p, Kv).reshape(k, n, M, d)
        dK = K1.transpose(0, 1, 3, 2).reshape(k, n * d, M)
        T = np.matmul(dK.transpose(0, 2, 1), dK)
        gq = np.zeros_like(Xn) if q0 is None or q0.kind == "uniform_box" else q0.grad(Xn)
        t = rk.lap(R, p, Kv).reshape(k, n, M).sum(axis=1) + np.einsum("knmi,kni->km", K1, gq.reshape(k, n, d))
        t = t / n
        sG += T.sum(axis=0)
        sG2 += (T * T).sum(axis=0)
        sg += t.sum(axis=0)
        sg2 += (t * t).sum(axis=0)
        done += k
    G = sG / K
    g = sg / K
    G_se = np.sqrt(np.maximum(sG2 / K - G * G, 0.0) / max(K - 1, 1))
    g_se = np.sqrt(np.maximum(sg2 / K - g * g, 0.0) / max(K - 1, 1))
    return NystromSystem(0.5 * (G + G.T), g, n, noise.sigma, G_se, g_se)


def gram(Z, spec: KernelSpec) -> np.ndarray:
    p = rk.precisions(spec.lengthscales, Z.shape[1])
    return rk.k0(Z[:, None, :] - Z[None, :, :], p)


def fit_nystrom(
    X,
    spec: KernelSpec,
    M_inducing: int,
    lam: float,
    noise=NoiseSpec(0.0),
    seed=None,
    q0: BaseDensity | None = None,
    jitter: float = 1e-8,
) -> NystromModel:
    """Fit on a uniformly drawn inducing subset (without replacement).

    Solves ``(G + n lam K11) beta = -n g``, which is the same solution as
    ``beta = (1/lam) [(G + n lam K11)^{-1} G K11^{-1} g - K11^{-1} g]``
    whenever ``K11`` is invertible.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if spec.family != "rbf":
        raise InvalidSpecError("Nyström baseline uses the rbf kernel")
    if not 1 <= M_inducing <= n:
        raise InvalidSpecError(f"need 1 <= M_inducing <= n, got {M_inducing}")
    if not lam > 0:
        raise InvalidSpecError("lambda must be > 0")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=M_inducing, replace=False))
    Z = X[idx]
    K11 = gram(Z, spec)
    K11_factor, jit = spd_factor(K11, jitter)
    system = nystrom_system(X, Z, spec, noise, q0)
    A = system.G + n * lam * (K11 + jit * np.eye(M_inducing))
    cf, _ = spd_factor(A, 0.0)
    beta = -n * linalg.cho_solve(cf, system.g)
    return NystromModel(Z, idx, spec, beta, K11_factor, q0, float(lam), _as_noise(noise).sigma, seed)
