"""Noise-convolved sufficient statistics of the denoising score-matching fit.

For a feature map ``phi`` and data ``x_1..x_n`` the denoising objective in the
coefficients ``b`` reduces to

    (1/n) * 0.5 * b^T H b + h^T b + const

with

    H = sum_a E_eps[ dPhi(x_a + eps)^T dPhi(x_a + eps) ]
    h = (1/n) sum_a E_eps[ sum_i d_i^2 phi(x_a + eps) + d_i phi(x_a + eps) d_i log q0(x_a + eps) ]

and ``eps ~ N(0, sigma^2 I)``.  Both expectations have closed forms for the
cosine features; for the arc-cosine features they reduce to truncated
(bivariate) Gaussian moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, owens_t

from .base_density import BaseDensity
from .errors import InvalidSpecError, UnsupportedError
from .features import FeatureMap, _check_X, profile, projections

_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class NoiseSpec:
    """Isotropic Gaussian noise ``N(0, sigma^2 I)``; ``sigma = 0`` disables it."""

    sigma: float = 0.0

    def __post_init__(self):
        s = float(self.sigma)
        if not np.isfinite(s) or s < 0:
            raise InvalidSpecError(f"noise sigma must be >= 0, got {self.sigma}")
        object.__setattr__(self, "sigma", s)


@dataclass(frozen=True)
class ConvolvedSystem:
    """``H`` (sum over data points) and ``h`` (mean over data points).

    ``H_se``/``h_se`` are only set by the Monte-Carlo estimator.
    """

    H: np.ndarray
    h: np.ndarray
    n: int
    sigma: float
    H_se: np.ndarray | None = None
    h_se: np.ndarray | None = None


def _as_noise(noise) -> NoiseSpec:
    return noise if isinstance(noise, NoiseSpec) else NoiseSpec(float(noise))


def build_system(fmap: FeatureMap, X, noise, q0: BaseDensity | None = None, **kw) -> ConvolvedSystem:
    """Analytic system for either feature family."""
    if fmap.family == "rbf":
        return build_system_rbf(fmap, X, noise, q0, **kw)
    return build_system_arccos(fmap, X, noise, q0, **kw)


# ------------------------------------------------------------------ rbf


def _pair_damping(W: np.ndarray, sigma: float):
    """exp(-sigma^2 |w_i -/+ w_j|^2 / 2) for all pairs."""
    if sigma == 0.0:
        return 1.0, 1.0
    sq = np.sum(W * W, axis=1)
    G = W @ W.T
    minus = np.maximum(sq[:, None] + sq[None, :] - 2.0 * G, 0.0)
    plus = np.maximum(sq[:, None] + sq[None, :] + 2.0 * G, 0.0)
    s2 = 0.5 * sigma * sigma
    return np.exp(-s2 * minus), np.exp(-s2 * plus)


def _quad_forms(Q: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``w_m^T Q_a w_m`` for every point ``a`` and frequency ``m`` as one GEMM."""
    d = W.shape[1]
    WW2 = (W[:, :, None] * W[:, None, :]).reshape(W.shape[0], d * d)
    return Q.reshape(Q.shape[0], d * d) @ WW2.T


def build_system_rbf(fmap: FeatureMap, X, noise, q0: BaseDensity | None = None, chunk: int = 4096) -> ConvolvedSystem:
    """Closed-form ``H, h`` for cosine features under Gaussian noise.

    Uses ``sin(u_i) sin(u_j) = [cos(u_i - u_j) - cos(u_i + u_j)] / 2`` and
    ``E cos(w^T (x + eps) + b) = exp(-sigma^2 |w|^2 / 2) cos(w^T x + b)``, so
    the sum over data points collapses to two Gram products of the cosine and
    sine matrices.  A non-Gaussian ``q0`` enters through its local score and
    Hessian at each data point.
    """
    if fmap.family != "rbf":
        raise InvalidSpecError("build_system_rbf needs an rbf feature map")
    noise = _as_noise(noise)
    X = _check_X(fmap, X)
    n = X.shape[0]
    sigma = noise.sigma
    W = fmap.W
    M = fmap.M
    c = fmap.scale
    sqn = np.sum(W * W, axis=1)
    damp = np.exp(-0.5 * sigma * sigma * sqn)

    CC = np.zeros((M, M))
    SS = np.zeros((M, M))
    hsum = np.zeros(M)
    for start in range(0, n, chunk):
        Xc = X[start:start + chunk]
        U = projections(fmap, Xc)
        C = np.cos(U)
        S = np.sin(U)
        CC += C.T @ C
        SS += S.T @ S
        # second-derivative term: -c |w|^2 E cos(u)
        hsum -= c * sqn * damp * C.sum(axis=0)
        if q0 is not None and q0.kind != "uniform_box":
            g = q0.grad(Xc)
            Q = q0.hess(Xc)
            wg = g @ W.T
            wQw = _quad_forms(Q, W)
            hsum -= c * damp * np.sum(wg * S + sigma * sigma * wQw * C, axis=0)

    if sigma == 0.0:
        H = (2.0 / M) * (W @ W.T) * SS
    else:
        Em, Ep = _pair_damping(W, sigma)
        H = (W @ W.T) * (Em * (CC + SS) - Ep * (CC - SS)) / M
    H = 0.5 * (H + H.T)
    return ConvolvedSystem(H, hsum / n, n, sigma)


# --------------------------------------------------------------- arccos


def _bvn_cdf(h, k, rho):
    """P(Z1 < h, Z2 < k) for a standard bivariate normal with correlation rho."""
    h, k, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, k, rho)))
    r = np.sqrt(np.maximum(1.0 - rho * rho, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * r)
        ak = (h - rho * k) / (k * r)
    ah = np.where(h == 0, np.copysign(np.inf, k - rho * h), ah)
    ak = np.where(k == 0, np.copysign(np.inf, h - rho * k), ak)
    hk = h * k
    delta = np.where((hk < 0) | ((hk == 0) & (h + k < 0)), 0.5, 0.0)
    out = 0.5 * (ndtr(h) + ndtr(k)) - owens_t(h, ah) - owens_t(k, ak) - delta
    both0 = (h == 0) & (k == 0)
    if np.any(both0):
        out = np.where(both0, 0.25 + np.arcsin(rho) / (2 * np.pi), out)
    return np.clip(out, 0.0, 1.0)


def _npdf(x):
    return np.exp(-0.5 * x * x) / _SQRT2PI


def _interval_prod_moment(alpha, beta, sgn, lo, hi):
    """E[(Z + alpha)(sgn Z + beta); lo < Z < hi] for standard normal Z."""
    plo, phi_ = _npdf(lo), _npdf(hi)
    with np.errstate(invalid="ignore"):
        lo_t = np.where(np.isfinite(lo), lo * plo, 0.0)
        hi_t = np.where(np.isfinite(hi), hi * phi_, 0.0)
    P = np.maximum(ndtr(hi) - ndtr(lo), 0.0)
    EZ = plo - phi_
    EZ2 = P + lo_t - hi_t
    return sgn * EZ2 + (sgn * alpha + beta) * EZ + alpha * beta * P


def truncated_product_moment(m1, m2, s1, s2, rho):
    """E[X Y 1(X > 0) 1(Y > 0)] for jointly Gaussian X, Y.

    ``X ~ N(m1, s1^2)``, ``Y ~ N(m2, s2^2)``, ``corr(X, Y) = rho``, all
    broadcastable arrays with ``s1, s2 > 0``.  Uses the truncated bivariate
    normal moments (Rosenbaum); ``|rho| = 1`` falls back to a 1-D integral.
    """
    m1, m2, s1, s2, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (m1, m2, s1, s2, rho)))
    a = m1 / s1
    b = m2 / s2
    h, k = -a, -b
    degenerate = np.abs(rho) > 1.0 - 1e-10
    rr = np.where(degenerate, 0.0, rho)
    r = np.sqrt(1.0 - rr * rr)
    L = _bvn_cdf(a, b, rr)
    Qh = ndtr((rr * h - k) / r)
    Qk = ndtr((rr * k - h) / r)
    EZ1 = _npdf(h) * Qh + rr * _npdf(k) * Qk
    EZ2 = _npdf(k) * Qk + rr * _npdf(h) * Qh
    quad = (h * h - 2 * rr * h * k + k * k) / (r * r)
    EZ12 = rr * L + rr * h * _npdf(h) * Qh + rr * k * _npdf(k) * Qk + r / _SQRT2PI * _npdf(np.sqrt(quad))
    out = EZ12 + b * EZ1 + a * EZ2 + a * b * L
    if np.any(degenerate):
        pos = rho > 0
        # rho = +1: Z2 = Z1, region Z > max(h, k); rho = -1: Z2 = -Z1, region h < Z < -k
        lo = np.where(pos, np.maximum(h, k), h)
        hi = np.where(pos, np.inf, -k)
        hi = np.maximum(hi, lo)
        sgn = np.where(pos, 1.0, -1.0)
        deg = _interval_prod_moment(a, b, sgn, lo, hi)
        out = np.where(degenerate, deg, out)
    return s1 * s2 * out


def _positive_first_moment(m, s):
    """E[U 1(U > 0)] and P(U > 0) for U ~ N(m, s^2), s > 0."""
    z = m / s
    return m * ndtr(z) + s * _npdf(z), ndtr(z)


def build_system_arccos(
    fmap: FeatureMap,
    X,
    noise,
    q0: BaseDensity | None = None,
    indicator: str = "exact",
    chunk: int = 64,
) -> ConvolvedSystem:
    """``H, h`` for order-2 arc-cosine features with a uniform ``q0``.

    With ``u = W(x + eps)`` Gaussian, ``H`` needs ``E[u_j u_k 1(u_j>0) 1(u_k>0)]``
    and ``h`` needs ``P(u_j > 0)``; both are computed exactly.
    ``indicator="frozen"`` instead keeps the half-space indicators at the
    clean data points, i.e. ``H ~ 4 WW^T . sum_a 1 1^T . W(x x^T + sigma^2 I)W^T``.
    """
    if fmap.family != "arccos":
        raise InvalidSpecError("build_system_arccos needs an arccos feature map")
    if q0 is not None and q0.kind != "uniform_box":
        raise UnsupportedError("arc-cosine system supports only a uniform base density")
    if indicator not in ("exact", "frozen"):
        raise InvalidSpecError(f"unknown indicator mode {indicator!r}")
    noise = _as_noise(noise)
    X = _check_X(fmap, X)
    n = X.shape[0]
    sigma = noise.sigma
    W = fmap.W
    M = fmap.M
    c2 = fmap.scale ** 2
    WW = W @ W.T
    sqn = np.diag(WW).copy()
    U = projections(fmap, X)  # (n, M)

    s = sigma * np.sqrt(sqn)  # std of u_j
    # far from every hyperplane the indicators are constant to double precision
    if sigma == 0.0 or indicator == "frozen" or np.all(np.abs(U) > 40.0 * s):
        P = np.where(U > 0, U, 0.0)
        I = (U > 0).astype(float)
        H = P.T @ P
        if sigma > 0:
            H = H + sigma * sigma * (I.T @ I) * WW
        H = 4.0 * c2 * WW * H
        h = 2.0 * fmap.scale * sqn * I.mean(axis=0)
        return ConvolvedSystem(0.5 * (H + H.T), h, n, sigma)

    rho = WW / np.outer(np.sqrt(sqn), np.sqrt(sqn))
    np.fill_diagonal(rho, 1.0)
    iu = np.triu_indices(M, 1)
    acc_off = np.zeros(iu[0].size)
    acc_diag = np.zeros(M)
    for start in range(0, n, chunk):
        Uc = U[start:start + chunk]
        z = Uc / s
        acc_diag += np.sum(s * s * ((1 + z * z) * ndtr(z) + z * _npdf(z)), axis=0)
        acc_off += np.sum(
            truncated_product_moment(Uc[:, iu[0]], Uc[:, iu[1]], s[iu[0]], s[iu[1]], rho[iu]),
            axis=0,
        )
    E = np.zeros((M, M))
    E[iu] = acc_off
    E = E + E.T
    E[np.diag_indices(M)] = acc_diag
    H = 4.0 * c2 * WW * E
    _, pos = _positive_first_moment(U, s)
    h = 2.0 * fmap.scale * sqn * pos.mean(axis=0)
    return ConvolvedSystem(H, h, n, sigma)


# ------------------------------------------------------------ MC oracle


def mc_convolved_system(
    fmap: FeatureMap,
    X,
    noise,
    q0: BaseDensity | None = None,
    K: int = 1000,
    seed=None,
    chunk: int = 2048,
) -> ConvolvedSystem:
    """Monte-Carlo estimate of ``H, h`` from ``K`` shared noise draws.

    Each draw ``z_k`` perturbs every data point; the per-draw statistics are
    averaged and their standard errors reported in ``H_se``/``h_se``.  The
    ``q0`` score is evaluated exactly at the perturbed points.
    """
    if K < 1:
        raise InvalidSpecError("K must be >= 1")
    noise = _as_noise(noise)
    X = _check_X(fmap, X)
    n, d = X.shape
    M = fmap.M
    sigma = noise.sigma
    W = fmap.W
    WW = W @ W.T
    sqn = np.diag(WW)
    rng = np.random.default_rng(seed)

    def per_draw(Xn):  # Xn: (k, n, d)
        U = Xn @ W.T
        if fmap.b is not None:
            U = U + fmap.b
        P1 = profile(fmap, U, 1)  # d_i phi = P1 * w_i
        T = np.matmul(P1.transpose(0, 2, 1), P1) * WW
        t = (profile(fmap, U, 2) * sqn).sum(axis=1)
        if q0 is not None and q0.kind != "uniform_box":
            g = q0.grad(Xn.reshape(-1, d)).reshape(Xn.shape)
            t = t + (P1 * (g @ W.T)).sum(axis=1)
        return T, t / n

    if sigma == 0.0:
        T, t = per_draw(X[None])
        return ConvolvedSystem(0.5 * (T[0] + T[0].T), t[0], n, 0.0, np.zeros((M, M)), np.zeros(M))

    sH = np.zeros((M, M))
    sH2 = np.zeros((M, M))
    sh = np.zeros(M)
    sh2 = np.zeros(M)
    step = max(1, chunk // max(n, 1))
    done = 0
    while done < K:
        k = min(step, K - done)
        Z = sigma * rng.standard_normal((k, 1, d))
        T, t = per_draw(X[None] + Z)
        sH += T.sum(axis=0)
        sH2 += (T * T).sum(axis=0)
        sh += t.sum(axis=0)
        sh2 += (t * t).sum(axis=0)
        done += k
    H = sH / K
    h = sh / K
    if K > 1:
        H_se = np.sqrt(np.maximum(sH2 / K - H * H, 0.0) * K / (K - 1) / K)
        h_se = np.sqrt(np.maximum(sh2 / K - h * h, 0.0) * K / (K - 1) / K)
    else:
        H_se = np.full((M, M), np.inf)
        h_se = np.full(M, np.inf)
    return ConvolvedSystem(0.5 * (H + H.T), h, n, sigma, H_se, h_se)
