"""Exact (infinite-feature) kernel score matching for small problems.

The regularized sample loss

    (1/n) sum_a sum_i [d_i^2 f(x_a) + 0.5 (d_i f(x_a))^2 + d_i f(x_a) d_i log q0(x_a)] + (lam/2) |f|^2

is minimized over the RKHS of the Gaussian kernel.  The minimizer is

    f = (1/lam) [ sum_{a,i} c_{ai} d_i k(x_a, .) - xi ],
    xi = (1/n) sum_a sum_i [ d_i^2 k(x_a, .) + d_i log q0(x_a) d_i k(x_a, .) ],
    (G + n lam I) c = (d_i xi(x_a))_{a,i},

where derivatives act on the first kernel argument and
``G_{(a,i),(b,j)} = <d_i k(x_a, .), d_j k(x_b, .)>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..base_density import BaseDensity
from ..errors import DimensionMismatchError, InvalidSpecError
from ..features import KernelSpec
from ..solver import default_jitter, spd_factor
from . import rbf_kernel as rk

MAX_ND = 4000


@dataclass(frozen=True)
class ExactKernelModel:
    X: np.ndarray
    spec: KernelSpec
    lam: float
    c: np.ndarray  # (n, d)
    g: np.ndarray  # q0 score at the data, (n, d)
    q0: BaseDensity | None
    provenance: str = "exact_kernel"

    @property
    def p(self) -> np.ndarray:
        return rk.precisions(self.spec.lengthscales, self.X.shape[1])

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def _check(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None] if self.d == 1 else Y[None, :]
        if Y.shape[1] != self.d:
            raise DimensionMismatchError(f"expected {self.d} columns")
        return Y

    def xi(self, Y) -> np.ndarray:
        Y = self._check(Y)
        R = self.X[:, None, :] - Y[None, :, :]  # x_b - y
        K = rk.k0(R, self.p)
        val = rk.lap(R, self.p, K) + np.einsum("bmi,bi->bm", rk.k1(R, self.p, K), self.g)
        return val.mean(axis=0)

    def grad_xi(self, Y) -> np.ndarray:
        Y = self._check(Y)
        R = self.X[:, None, :] - Y[None, :, :]
        K = rk.k0(R, self.p)
        # d/dy of a function of (x_b - y) flips the sign
        val = -rk.grad_lap(R, self.p, K) - np.einsum("bmij,bj->bmi", rk.k2(R, self.p, K), self.g)
        return val.mean(axis=0)

    def lap_xi(self, Y) -> np.ndarray:
        Y = self._check(Y)
        R = self.X[:, None, :] - Y[None, :, :]
        K = rk.k0(R, self.p)
        val = rk.bilap(R, self.p, K) + np.einsum("bmi,bi->bm", rk.grad_lap(R, self.p, K), self.g)
        return val.mean(axis=0)

    def f(self, Y) -> np.ndarray:
        Y = self._check(Y)
        R = self.X[:, None, :] - Y[None, :, :]
        s = np.einsum("ami,ai->m", rk.k1(R, self.p), self.c)
        return (s - self.xi(Y)) / self.lam

    def grad_f(self, Y) -> np.ndarray:
        Y = self._check(Y)
        R = self.X[:, None, :] - Y[None, :, :]
        s = -np.einsum("amil,ai->ml", rk.k2(R, self.p), self.c)
        return (s - self.grad_xi(Y)) / self.lam

    def lap_f(self, Y) -> np.ndarray:
        Y = self._check(Y)
        R = self.X[:, None, :] - Y[None, :, :]
        s = np.einsum("ami,ai->m", rk.grad_lap(R, self.p), self.c)
        return (s - self.lap_xi(Y)) / self.lam

    def score_and_laplacian(self, Y):
        Y = self._check(Y)
        grad, lap = self.grad_f(Y), self.lap_f(Y)
        if self.q0 is not None and self.q0.kind != "uniform_box":
            grad = grad + self.q0.grad(Y)
            lap = lap + self.q0.laplacian(Y)
        return grad, lap

    def log_density(self, Y) -> np.ndarray:
        Y = self._check(Y)
        out = self.f(Y)
        return out if self.q0 is None else out + self.q0.logpdf(Y)

    def score(self, Y) -> np.ndarray:
        Y = self._check(Y)
        out = self.grad_f(Y)
        return out if self.q0 is None else out + self.q0.grad(Y)


def _data_score(q0, X):
    if q0 is None or q0.kind == "uniform_box":
        return np.zeros_like(X)
    return q0.grad(X)


def fit_exact_kernel(
    X, spec: KernelSpec, lam: float, q0: BaseDensity | None = None, jitter: float | None = None
) -> ExactKernelModel:
    """Solve the ``nd x nd`` representer system (Gaussian kernel only).

    ``jitter`` defaults to ``1e-10`` times the mean diagonal of ``G``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n * d > MAX_ND:
        raise InvalidSpecError(f"exact kernel fit limited to n*d <= {MAX_ND}, got {n * d}")
    if spec.family != "rbf":
        raise InvalidSpecError("exact kernel fit is implemented for the rbf kernel only")
    if not lam > 0:
        raise InvalidSpecError("lambda must be > 0")
    p = rk.precisions(spec.lengthscales, d)
    g = _data_score(q0, X)
    R = X[:, None, :] - X[None, :, :]
    # <d_i k(x_a,.), d_j k(x_b,.)> = -k_ij(x_a - x_b)
    G = -rk.k2(R, p).transpose(0, 2, 1, 3).reshape(n * d, n * d)
    G = 0.5 * (G + G.T)
    model = ExactKernelModel(X, spec, float(lam), np.zeros((n, d)), g, q0)
    rhs = model.grad_xi(X).reshape(-1)
    cf, _ = spd_factor(G + n * lam * np.eye(n * d), default_jitter(G) if jitter is None else jitter)
    c = linalg.cho_solve(cf, rhs).reshape(n, d)
    return ExactKernelModel(X, spec, float(lam), c, g, q0)
