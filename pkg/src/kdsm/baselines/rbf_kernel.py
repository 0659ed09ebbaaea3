"""Gaussian kernel ``k(r) = exp(-0.5 sum_i p_i r_i^2)`` and its derivatives in ``r``.

``p_i = 1 / l_i^2``.  All functions take difference vectors ``R`` of shape
(..., d) and return arrays with the same leading shape.
"""

from __future__ import annotations

import numpy as np


def precisions(lengthscales, d: int) -> np.ndarray:
    ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
    if ls.size == 1:
        ls = np.repeat(ls, d)
    return 1.0 / ls**2


def k0(R, p):
    return np.exp(-0.5 * np.sum(p * R * R, axis=-1))


def k1(R, p, k=None):
    """Gradient, shape (..., d)."""
    k = k0(R, p) if k is None else k
    return -(p * R) * k[..., None]


def k2(R, p, k=None):
    """Hessian, shape (..., d, d)."""
    k = k0(R, p) if k is None else k
    pr = p * R
    H = pr[..., :, None] * pr[..., None, :] - np.diag(p)
    return H * k[..., None, None]


def lap(R, p, k=None):
    """Laplacian, shape (...)."""
    k = k0(R, p) if k is None else k
    return (np.sum((p * R) ** 2, axis=-1) - np.sum(p)) * k


def grad_lap(R, p, k=None):
    """Gradient of the Laplacian, shape (..., d)."""
    k = k0(R, p) if k is None else k
    pr = p * R
    inner = -np.sum(pr * pr, axis=-1)[..., None] + np.sum(p) + 2.0 * p
    return pr * inner * k[..., None]


def bilap(R, p, k=None):
    """Laplacian of the Laplacian, shape (...)."""
    k = k0(R, p) if k is None else k
    u = np.sum((p * R) ** 2, axis=-1) - np.sum(p)
    return (2.0 * np.sum(p * p) - 4.0 * np.sum(p**3 * R * R, axis=-1) + u * u) * k


def k3(R, p, k=None):
    """Third-derivative tensor, shape (..., d, d, d)."""
    k = k0(R, p) if k is None else k
    pr = p * R
    d = R.shape[-1]
    eye = np.eye(d)
    T = -pr[..., :, None, None] * pr[..., None, :, None] * pr[..., None, None, :]
    T = T + eye[:, :, None] * p[:, None, None] * pr[..., None, None, :]
    T = T + eye[:, None, :] * p[:, None, None] * pr[..., None, :, None]
    T = T + eye[None, :, :] * p[None, :, None] * pr[..., :, None, None]
    return T * k[..., None, None, None]
