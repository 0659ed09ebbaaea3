"""Random feature maps and their coordinate derivatives.

Two families are supported:

* ``rbf``: random Fourier features ``phi(x) = sqrt(2/M) cos(W x + b)`` with
  ``w_j ~ N(0, diag(1/l^2))`` and ``b_j ~ U[0, 2 pi)``.
* ``arccos``: order-2 arc-cosine features
  ``phi_j(x) = sqrt(2/M) (w_j^T x)^2 1(w_j^T x > 0)`` with ``w_j ~ N(0, I)``.

Both use the same ``sqrt(2/M)`` scale, so ``phi(x)^T phi(y)`` is a Monte-Carlo
estimate of the kernel in either case.

Derivative matrices use the row layout ``a * d + i`` (0-based) for data
point ``a`` and coordinate ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DimensionMismatchError, InvalidSpecError

Family = Literal["rbf", "arccos"]


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its hyperparameters.

    ``lengthscales`` is only meaningful for ``rbf``; ``arccos_order`` is fixed
    to 2.
    """

    family: Family = "rbf"
    lengthscales: tuple[float, ...] | None = None
    arccos_order: int = 2

    def __post_init__(self):
        if self.family not in ("rbf", "arccos"):
            raise InvalidSpecError(f"unknown kernel family {self.family!r}")
        if self.family == "rbf":
            if self.lengthscales is None or len(self.lengthscales) == 0:
                raise InvalidSpecError("rbf kernel needs lengthscales")
            ls = tuple(float(v) for v in np.ravel(self.lengthscales))
            if not all(np.isfinite(v) and v > 0 for v in ls):
                raise InvalidSpecError(f"lengthscales must be positive, got {ls}")
            object.__setattr__(self, "lengthscales", ls)
        elif self.arccos_order != 2:
            raise InvalidSpecError("only arccos_order=2 is supported")

    @classmethod
    def rbf(cls, lengthscales: float | Sequence[float], d: int | None = None) -> "KernelSpec":
        ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        if d is not None and ls.size == 1:
            ls = np.repeat(ls, d)
        return cls("rbf", tuple(ls))

    @classmethod
    def arccos(cls) -> "KernelSpec":
        return cls("arccos")

    def with_lengthscales(self, lengthscales) -> "KernelSpec":
        return KernelSpec("rbf", tuple(np.ravel(lengthscales)))

    def to_dict(self) -> dict:
        out = {"family": self.family}
        if self.family == "rbf":
            out["lengthscales"] = list(self.lengthscales)
        else:
            out["arccos_order"] = self.arccos_order
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        if data["family"] == "rbf":
            return cls("rbf", tuple(data["lengthscales"]))
        return cls("arccos", None, int(data.get("arccos_order", 2)))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureMap:
    """Sampled frequencies (and phases) defining a random feature map."""

    W: np.ndarray
    b: np.ndarray | None
    spec: KernelSpec
    seed: int | None = None
    M: int = field(init=False)

    def __post_init__(self):
        W = _readonly(self.W)
        if W.ndim != 2 or W.shape[0] < 1:
            raise InvalidSpecError("W must be an (M, d) matrix with M >= 1")
        if not np.all(np.isfinite(W)):
            raise InvalidSpecError("W has non-finite entries")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "M", W.shape[0])
        if self.spec.family == "rbf":
            if self.b is None or np.shape(self.b) != (W.shape[0],):
                raise InvalidSpecError("rbf feature map needs a phase vector of length M")
            object.__setattr__(self, "b", _readonly(self.b))
        elif self.b is not None:
            raise InvalidSpecError("arccos feature map has no phases")

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def family(self) -> str:
        return self.spec.family

    @property
    def scale(self) -> float:
        return float(np.sqrt(2.0 / self.M))

    def with_lengthscales(self, lengthscales) -> "FeatureMap":
        """Same random draws, rescaled to new rbf lengthscales."""
        if self.family != "rbf":
            raise InvalidSpecError("lengthscales only apply to rbf maps")
        new_spec = self.spec.with_lengthscales(lengthscales)
        Z = self.W * np.asarray(self.spec.lengthscales)
        return FeatureMap(Z / np.asarray(new_spec.lengthscales), self.b, new_spec, self.seed)


def sample_feature_map(spec: KernelSpec, d: int, M: int, seed: int | None = None) -> FeatureMap:
    """Draw a feature map deterministically from ``seed``.

    rbf frequencies are generated as ``Z / l`` with ``Z`` standard normal, so
    maps that differ only in lengthscales share the same underlying draws.
    """
    if M < 1 or d < 1:
        raise InvalidSpecError(f"need M >= 1 and d >= 1, got M={M}, d={d}")
    rng = np.random.default_rng(seed)
    if spec.family == "rbf":
        ls = np.asarray(spec.lengthscales, dtype=float)
        if ls.size == 1:
            ls = np.repeat(ls, d)
            spec = KernelSpec("rbf", tuple(ls))
        if ls.size != d:
            raise InvalidSpecError(f"expected {d} lengthscales, got {ls.size}")
        Z = rng.standard_normal((M, d))
        b = rng.uniform(0.0, 2.0 * np.pi, size=M)
        return FeatureMap(Z / ls, b, spec, seed)
    Z = rng.standard_normal((M, d))
    return FeatureMap(Z, None, spec, seed)


@dataclass(frozen=True)
class DerivativeBatch:
    """Feature values with first and pure second coordinate derivatives."""

    Phi: np.ndarray  # (n, M)
    dPhi: np.ndarray  # (n*d, M)
    d2Phi: np.ndarray  # (n*d, M)


def _check_X(fmap: FeatureMap, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != fmap.d:
        raise DimensionMismatchError(f"expected data with {fmap.d} columns, got shape {X.shape}")
    return X


def projections(fmap: FeatureMap, X) -> np.ndarray:
    """``W x + b`` (rbf) or ``W x`` (arccos) for every row, shape (n, M)."""
    X = _check_X(fmap, X)
    U = X @ fmap.W.T
    if fmap.b is not None:
        U = U + fmap.b
    return U


# d^k/du^k cos(u) for k = 0..3
def _cos_derivative(U: np.ndarray, k: int) -> np.ndarray:
    k %= 4
    if k == 0:
        return np.cos(U)
    if k == 1:
        return -np.sin(U)
    if k == 2:
        return -np.cos(U)
    return np.sin(U)


def _arccos_profile(U: np.ndarray, k: int) -> np.ndarray:
    """k-th derivative of u -> u^2 1(u > 0)."""
    pos = U > 0
    if k == 0:
        return np.where(pos, U * U, 0.0)
    if k == 1:
        return np.where(pos, 2.0 * U, 0.0)
    if k == 2:
        return pos.astype(float) * 2.0
    return np.zeros_like(U)


def profile(fmap: FeatureMap, U: np.ndarray, k: int) -> np.ndarray:
    """k-th derivative of the scalar feature profile at projections ``U``, scaled."""
    if fmap.family == "rbf":
        return fmap.scale * _cos_derivative(U, k)
    return fmap.scale * _arccos_profile(U, k)


def features(fmap: FeatureMap, X) -> np.ndarray:
    return profile(fmap, projections(fmap, X), 0)


def partial(fmap: FeatureMap, X, orders: Sequence[int]) -> np.ndarray:
    """Mixed partial derivative of every feature, ``d^alpha phi(x)``, shape (n, M).

    ``orders`` is the multi-index ``alpha`` (one non-negative order per
    coordinate).
    """
    orders = np.asarray(orders, dtype=int)
    if orders.shape != (fmap.d,) or np.any(orders < 0):
        raise DimensionMismatchError("orders must be a non-negative multi-index of length d")
    coef = np.prod(fmap.W ** orders, axis=1)
    return profile(fmap, projections(fmap, X), int(orders.sum())) * coef


def eval_batch(fmap: FeatureMap, X) -> DerivativeBatch:
    """Feature matrix plus first and second coordinate derivatives."""
    X = _check_X(fmap, X)
    n, d = X.shape
    U = projections(fmap, X)
    P1 = profile(fmap, U, 1)
    P2 = profile(fmap, U, 2)
    # row a*d + i <- P(a, :) * W[:, i]^k
    dPhi = (P1[:, None, :] * fmap.W.T[None, :, :]).reshape(n * d, fmap.M)
    d2Phi = (P2[:, None, :] * (fmap.W.T ** 2)[None, :, :]).reshape(n * d, fmap.M)
    return DerivativeBatch(profile(fmap, U, 0), dPhi, d2Phi)
