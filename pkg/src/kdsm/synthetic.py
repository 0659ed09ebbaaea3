"""Two-dimensional ground-truth distributions with exact samplers, log-densities and scores."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import log_ndtr, logsumexp
from scipy.stats import truncnorm

from .errors import InvalidSpecError

_LOG2PI = np.log(2 * np.pi)

DEFAULTS: dict[str, dict] = {
    "gauss_mixture": {"means": [[-2.0, 0.0], [2.0, 0.0]], "std": 1.0, "weights": [0.5, 0.5]},
    "uniform": {"lower": [-3.0, -3.0], "upper": [3.0, 3.0]},
    "uniform_mixture": {
        "boxes": [[[-3.0, -1.0], [-1.0, 1.0]], [[1.0, -1.0], [3.0, 1.0]]],
        "weights": [0.5, 0.5],
    },
    "cosine": {"x1_std": 2.0, "freq": 1.5, "noise_std": 0.3},
    "funnel": {"x1_std": 1.5},
    "banana": {"x1_std": 2.0, "x2_std": 1.0, "curvature": 0.5},
    "ring": {"radius": 3.0, "radial_std": 0.25},
    "ring_mixture": {"radii": [1.0, 3.0], "radial_std": 0.25, "weights": [0.5, 0.5]},
}

FAMILIES = tuple(DEFAULTS)


def _norm_logpdf(x, mean, std):
    z = (x - mean) / std
    return -0.5 * z * z - np.log(std) - 0.5 * _LOG2PI


@dataclass(frozen=True)
class Synthetic2D:
    """A named 2-D distribution.

    ``logpdf`` returns ``-inf`` off the support; ``score`` is only meaningful
    where ``in_support`` holds (it is zero inside the flat uniform families).
    """

    name: str
    params: dict
    full_support: bool
    seed: int | None
    _logpdf: Callable = field(repr=False, compare=False)
    _score: Callable = field(repr=False, compare=False)
    _sample: Callable = field(repr=False, compare=False)
    _support: Callable = field(repr=False, compare=False)

    @property
    def support(self) -> str:
        return "full_plane" if self.full_support else "bounded"

    def logpdf(self, X) -> np.ndarray:
        return self._logpdf(_as2d(X))

    def score(self, X) -> np.ndarray:
        return self._score(_as2d(X))

    def in_support(self, X) -> np.ndarray:
        return self._support(_as2d(X))

    def sample(self, n: int, seed=None) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(self.seed if seed is None else seed)
        return self._sample(int(n), rng)


def _as2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != 2:
        raise InvalidSpecError("synthetic distributions are two-dimensional")
    return X


def _everywhere(X):
    return np.ones(X.shape[0], dtype=bool)


def _gauss_mixture(p):
    means = np.asarray(p["means"], dtype=float)
    std = float(p["std"])
    w = np.asarray(p["weights"], dtype=float)
    w = w / w.sum()

    def comp(X):
        diff = X[:, None, :] - means[None]
        logs = np.log(w) - 0.5 * np.sum(diff**2, -1) / std**2 - 2 * np.log(std) - _LOG2PI
        return logs, diff

    def logpdf(X):
        return logsumexp(comp(X)[0], axis=1)

    def score(X):
        logs, diff = comp(X)
        r = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        return -np.einsum("nk,nkd->nd", r, diff) / std**2

    def sample(n, rng):
        k = rng.choice(w.size, size=n, p=w)
        return means[k] + std * rng.standard_normal((n, 2))

    return logpdf, score, sample, _everywhere, True


def _boxes_family(boxes, w):
    boxes = np.asarray(boxes, dtype=float)  # (k, 2, 2): [lower, upper]
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    areas = np.prod(boxes[:, 1] - boxes[:, 0], axis=1)

    def member(X):
        return np.all((X[:, None, :] >= boxes[None, :, 0]) & (X[:, None, :] <= boxes[None, :, 1]), axis=2)

    def logpdf(X):
        dens = member(X).astype(float) @ (w / areas)
        with np.errstate(divide="ignore"):
            return np.log(dens)

    def score(X):
        return np.zeros_like(X)

    def sample(n, rng):
        k = rng.choice(w.size, size=n, p=w)
        lo, hi = boxes[k, 0], boxes[k, 1]
        return lo + (hi - lo) * rng.uniform(size=(n, 2))

    def support(X):
        return member(X).any(axis=1)

    return logpdf, score, sample, support, False


def _uniform(p):
    return _boxes_family([[p["lower"], p["upper"]]], [1.0])


def _uniform_mixture(p):
    return _boxes_family(p["boxes"], p["weights"])


def _cosine(p):
    s1, fr, s2 = float(p["x1_std"]), float(p["freq"]), float(p["noise_std"])

    def logpdf(X):
        return _norm_logpdf(X[:, 0], 0, s1) + _norm_logpdf(X[:, 1], np.sin(fr * X[:, 0]), s2)

    def score(X):
        r = X[:, 1] - np.sin(fr * X[:, 0])
        g1 = -X[:, 0] / s1**2 + r / s2**2 * fr * np.cos(fr * X[:, 0])
        return np.column_stack([g1, -r / s2**2])

    def sample(n, rng):
        x1 = s1 * rng.standard_normal(n)
        return np.column_stack([x1, np.sin(fr * x1) + s2 * rng.standard_normal(n)])

    return logpdf, score, sample, _everywhere, True


def _funnel(p):
    s1 = float(p["x1_std"])

    def logpdf(X):
        x1, x2 = X[:, 0], X[:, 1]
        return _norm_logpdf(x1, 0, s1) - 0.5 * x1 - 0.5 * _LOG2PI - 0.5 * x2**2 * np.exp(-x1)

    def score(X):
        x1, x2 = X[:, 0], X[:, 1]
        e = np.exp(-x1)
        return np.column_stack([-x1 / s1**2 - 0.5 + 0.5 * x2**2 * e, -x2 * e])

    def sample(n, rng):
        x1 = s1 * rng.standard_normal(n)
        return np.column_stack([x1, np.exp(0.5 * x1) * rng.standard_normal(n)])

    return logpdf, score, sample, _everywhere, True


def _banana(p):
    s1, s2, c = float(p["x1_std"]), float(p["x2_std"]), float(p["curvature"])

    def warp(x1):
        return c * (x1**2 - s1**2)

    def logpdf(X):
        return _norm_logpdf(X[:, 0], 0, s1) + _norm_logpdf(X[:, 1] - warp(X[:, 0]), 0, s2)

    def score(X):
        r = (X[:, 1] - warp(X[:, 0])) / s2**2
        return np.column_stack([-X[:, 0] / s1**2 + r * 2 * c * X[:, 0], -r])

    def sample(n, rng):
        x1 = s1 * rng.standard_normal(n)
        return np.column_stack([x1, warp(x1) + s2 * rng.standard_normal(n)])

    return logpdf, score, sample, _everywhere, True


def _rings(radii, std, w):
    """Mixture of rings: radius ~ N(r_k, std^2) truncated to r > 0, angle uniform."""
    radii = np.asarray(radii, dtype=float)
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    log_trunc = log_ndtr(radii / std)

    def comp(X):
        r = np.sqrt(np.sum(X * X, axis=1))
        with np.errstate(divide="ignore"):
            logs = (
                np.log(w)
                + _norm_logpdf(r[:, None], radii[None], std)
                - log_trunc
                - np.log(2 * np.pi * r)[:, None]
            )
        return logs, r

    def logpdf(X):
        return logsumexp(comp(X)[0], axis=1)

    def score(X):
        logs, r = comp(X)
        resp = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        dr = -(r[:, None] - radii[None]) / std**2 - 1.0 / r[:, None]
        return (resp * dr).sum(axis=1)[:, None] * X / r[:, None]

    def sample(n, rng):
        k = rng.choice(w.size, size=n, p=w)
        a = -radii[k] / std
        r = truncnorm.rvs(a, np.inf, loc=radii[k], scale=std, random_state=rng)
        t = rng.uniform(0, 2 * np.pi, size=n)
        return np.column_stack([r * np.cos(t), r * np.sin(t)])

    return logpdf, score, sample, _everywhere, True


def _ring(p):
    return _rings([p["radius"]], p["radial_std"], [1.0])


def _ring_mixture(p):
    return _rings(p["radii"], p["radial_std"], p["weights"])


_BUILDERS = {
    "gauss_mixture": _gauss_mixture,
    "uniform": _uniform,
    "uniform_mixture": _uniform_mixture,
    "cosine": _cosine,
    "funnel": _funnel,
    "banana": _banana,
    "ring": _ring,
    "ring_mixture": _ring_mixture,
}


def make_distribution(name: str, params: dict | None = None, seed: int | None = None) -> Synthetic2D:
    """Build a named family; ``params`` overrides individual defaults."""
    if name not in DEFAULTS:
        raise InvalidSpecError(f"unknown synthetic family {name!r}; choose from {', '.join(FAMILIES)}")
    merged = dict(DEFAULTS[name])
    unknown = set(params or {}) - set(merged)
    if unknown:
        raise InvalidSpecError(f"unknown parameters for {name}: {sorted(unknown)}")
    merged.update(params or {})
    logpdf, score, sampler, support, full = _BUILDERS[name](merged)
    return Synthetic2D(name, merged, full, seed, logpdf, score, sampler, support)


def sample(dist: Synthetic2D, n: int, seed=None) -> np.ndarray:
    if n < 1:
        raise InvalidSpecError("n must be >= 1")
    return dist.sample(n, seed)
