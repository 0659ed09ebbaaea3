"""Hyperparameter search over (lambda, sigma, lengthscales) by validated score-matching loss."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .base_density import BaseDensity, fit_q0
from .convolution import NoiseSpec, build_system
from .errors import EstimationError, InvalidSpecError, KdsmError
from .features import FeatureMap, KernelSpec, sample_feature_map
from .model import DensityModel
from .solver import FitConfig, fit_dsm

log = logging.getLogger(__name__)

LAM_BOUNDS = (1e-8, 10.0)
SIGMA_BOUNDS = (1e-4, 5.0)  # lower end keeps log(sigma) finite
LS_BOUNDS = (1e-3, 1e3)


@dataclass(frozen=True)
class Hyperparams:
    lam: float
    sigma: float
    lengthscales: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TuneConfig:
    """Settings for ``tune``.

    ``optimizer="adam"`` runs ``iterations`` Adam steps on central
    finite-difference gradients in log-parameter space; each step draws a
    fresh random subsample of at most ``batch_size`` rows and splits it into
    train and validation halves.  ``optimizer="grid"`` evaluates every cell of
    the product grid on one fixed split of the data.
    """

    iterations: int = 60
    learning_rate: float = 0.1
    batch_size: int = 512
    train_fraction: float = 0.5
    optimizer: Literal["adam", "grid"] = "adam"
    lam_grid: tuple[float, ...] = ()
    sigma_grid: tuple[float, ...] = ()
    lengthscale_grid: tuple[float, ...] = ()
    seed: int | None = None
    fd_step: float = 1e-3
    tune_sigma: bool = True
    tune_lengthscales: bool = True
    grid_max_rows: int | None = None
    n_z: int = 10_000

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidSpecError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidSpecError("learning_rate must be > 0")
        if not 0 < self.train_fraction < 1:
            raise InvalidSpecError("train_fraction must lie in (0, 1)")
        if self.optimizer not in ("adam", "grid"):
            raise InvalidSpecError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "grid" and not (self.lam_grid and self.sigma_grid):
            raise InvalidSpecError("grid optimizer needs non-empty lam_grid and sigma_grid")
        for name in ("lam_grid", "sigma_grid", "lengthscale_grid"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))


@dataclass
class TuneResult:
    best: Hyperparams
    best_loss: float
    model: DensityModel
    trace: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class LossSurface:
    losses: np.ndarray  # (len(lam_grid), len(sigma_grid)), row-major in lambda
    lam_grid: tuple[float, ...]
    sigma_grid: tuple[float, ...]

    def argmin(self) -> tuple[float, float]:
        i, j = np.unravel_index(np.nanargmin(self.losses), self.losses.shape)
        return self.lam_grid[i], self.sigma_grid[j]

    def rows(self) -> list[dict]:
        return [
            {"lam": lam, "sigma": sig, "loss": float(self.losses[i, j])}
            for i, lam in enumerate(self.lam_grid)
            for j, sig in enumerate(self.sigma_grid)
        ]


def split_indices(n: int, seed, max_rows: int | None = None, train_fraction: float = 0.5):
    """Disjoint random train/validation index sets drawn from at most ``max_rows`` rows."""
    rng = np.random.default_rng(seed)
    m = n if max_rows is None else min(n, max_rows)
    idx = rng.permutation(n)[:m]
    k = int(round(train_fraction * m))
    k = min(max(k, 1), m - 1)
    return idx[:k], idx[k:]


def fit_validate(fmap: FeatureMap, q0: BaseDensity, Xt, Xv, hp: Hyperparams) -> float:
    """Closed-form fit on ``Xt`` and validated score-matching loss on ``Xv``."""
    if hp.lengthscales is not None and fmap.family == "rbf":
        fmap = fmap.with_lengthscales(hp.lengthscales)
    noise = NoiseSpec(hp.sigma)
    try:
        coeffs = fit_dsm(build_system(fmap, Xt, noise, q0), FitConfig(hp.lam, noise))
    except KdsmError:
        return float("nan")
    return DensityModel(coeffs, fmap, q0).validation_sm_loss(Xv).total


def _resolve_q0(q0, q0_kind, X, seed) -> BaseDensity:
    if q0 is not None:
        return q0
    return fit_q0(q0_kind, X, seed=seed)


def final_model(X, fmap: FeatureMap, q0: BaseDensity, hp: Hyperparams, n_z: int, seed) -> DensityModel:
    """Refit on all of ``X`` with ``hp``; attach a normalizer when ``q0`` allows it."""
    if hp.lengthscales is not None and fmap.family == "rbf":
        fmap = fmap.with_lengthscales(hp.lengthscales)
    noise = NoiseSpec(hp.sigma)
    coeffs = fit_dsm(build_system(fmap, X, noise, q0), FitConfig(hp.lam, noise))
    model = DensityModel(coeffs, fmap, q0)
    if q0.normalizable:
        model = model.with_normalizer(n_z, seed)
    return model


def _seeds(seed):
    ss = np.random.SeedSequence(seed)
    fmap_ss, q0_ss, split_ss, z_ss = ss.spawn(4)
    return (
        int(fmap_ss.generate_state(1)[0]),
        int(q0_ss.generate_state(1)[0]),
        split_ss,
        int(z_ss.generate_state(1)[0]),
    )


def tune(
    X,
    spec0: KernelSpec,
    q0_kind: str,
    M: int,
    cfg: TuneConfig,
    lam0: float = 1e-2,
    sigma0: float = 0.1,
    q0: BaseDensity | None = None,
) -> TuneResult:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < 20:
        raise InvalidSpecError("tuning needs at least 20 rows")
    fmap_seed, q0_seed, split_ss, z_seed = _seeds(cfg.seed)
    fmap = sample_feature_map(spec0, d, M, fmap_seed)
    q0 = _resolve_q0(q0, q0_kind, X, q0_seed)
    if cfg.optimizer == "grid":
        return _tune_grid(X, fmap, q0, cfg, split_ss, z_seed)
    return _tune_adam(X, fmap, q0, cfg, lam0, sigma0, split_ss, z_seed)


def _grid_cells(cfg: TuneConfig, fmap: FeatureMap):
    ls_opts: Sequence = [None]
    if cfg.lengthscale_grid and fmap.family == "rbf":
        ls_opts = [tuple([v] * fmap.d) for v in cfg.lengthscale_grid]
    for lam, sig, ls in itertools.product(cfg.lam_grid, cfg.sigma_grid, ls_opts):
        yield Hyperparams(lam, sig, ls if ls is not None else fmap.spec.lengthscales)


def _tune_grid(X, fmap, q0, cfg, split_ss, z_seed) -> TuneResult:
    tr, va = split_indices(X.shape[0], split_ss, cfg.grid_max_rows, cfg.train_fraction)
    trace = []
    best, best_loss = None, np.inf
    for k, hp in enumerate(_grid_cells(cfg, fmap)):
        loss = fit_validate(fmap, q0, X[tr], X[va], hp)
        trace.append(_trace_row(k, hp, loss))
        if np.isfinite(loss) and loss < best_loss:
            best, best_loss = hp, loss
    if best is None:
        raise EstimationError("every grid cell produced a non-finite loss")
    model = final_model(X, fmap, q0, best, cfg.n_z, z_seed)
    return TuneResult(best, float(best_loss), model, trace)


def _trace_row(it: int, hp: Hyperparams, loss: float) -> dict:
    row = {"iteration": it, "lam": hp.lam, "sigma": hp.sigma}
    for i, v in enumerate(hp.lengthscales or ()):
        row[f"ls_{i + 1}"] = v
    row["loss"] = float(loss)
    return row


class _Params:
    """Mapping between hyperparameters and the unconstrained log vector."""

    def __init__(self, fmap: FeatureMap, cfg: TuneConfig, sigma0: float):
        self.rbf = fmap.family == "rbf"
        self.d = fmap.d
        self.use_sigma = cfg.tune_sigma and sigma0 > 0
        self.use_ls = cfg.tune_lengthscales and self.rbf
        self.sigma_fixed = sigma0
        self.ls_fixed = fmap.spec.lengthscales if self.rbf else None
        lo = [np.log(LAM_BOUNDS[0])]
        hi = [np.log(LAM_BOUNDS[1])]
        if self.use_sigma:
            lo.append(np.log(SIGMA_BOUNDS[0]))
            hi.append(np.log(SIGMA_BOUNDS[1]))
        if self.use_ls:
            lo += [np.log(LS_BOUNDS[0])] * self.d
            hi += [np.log(LS_BOUNDS[1])] * self.d
        self.lo, self.hi = np.array(lo), np.array(hi)

    def encode(self, hp: Hyperparams) -> np.ndarray:
        v = [np.log(hp.lam)]
        if self.use_sigma:
            v.append(np.log(hp.sigma))
        if self.use_ls:
            v += list(np.log(hp.lengthscales))
        return np.clip(np.array(v), self.lo, self.hi)

    def decode(self, v: np.ndarray) -> Hyperparams:
        v = np.clip(v, self.lo, self.hi)
        lam = float(np.exp(v[0]))
        k = 1
        sigma = self.sigma_fixed
        if self.use_sigma:
            sigma = float(np.exp(v[k]))
            k += 1
        ls = self.ls_fixed
        if self.use_ls:
            ls = tuple(float(x) for x in np.exp(v[k:k + self.d]))
        return Hyperparams(lam, sigma, ls)


def _tune_adam(X, fmap, q0, cfg, lam0, sigma0, split_ss, z_seed) -> TuneResult:
    params = _Params(fmap, cfg, sigma0)
    theta = params.encode(Hyperparams(lam0, sigma0, params.ls_fixed))
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    lr = cfg.learning_rate
    h = cfg.fd_step
    split_seeds = split_ss.spawn(cfg.iterations)
    trace = []
    best_hp, best_loss = None, np.inf
    t = 0
    for it in range(cfg.iterations):
        tr, va = split_indices(X.shape[0], split_seeds[it], cfg.batch_size, cfg.train_fraction)
        Xt, Xv = X[tr], X[va]
        hp = params.decode(theta)
        loss = fit_validate(fmap, q0, Xt, Xv, hp)
        if not np.isfinite(loss):
            if it == 0:
                raise EstimationError(f"non-finite validation loss at the initial hyperparameters {hp}")
            log.warning("non-finite loss at iteration %d; rejecting step and halving the rate", it)
            theta = prev_theta
            lr *= 0.5
            continue
        trace.append(_trace_row(it, hp, loss))
        if loss < best_loss:
            best_hp, best_loss = hp, loss
        grad = np.zeros_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            up = fit_validate(fmap, q0, Xt, Xv, params.decode(theta + e))
            dn = fit_validate(fmap, q0, Xt, Xv, params.decode(theta - e))
            grad[k] = (up - dn) / (2 * h) if np.isfinite(up) and np.isfinite(dn) else 0.0
        t += 1
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        prev_theta = theta
        theta = np.clip(theta - lr * mhat / (np.sqrt(vhat) + eps), params.lo, params.hi)
    model = final_model(X, fmap, q0, best_hp, cfg.n_z, z_seed)
    return TuneResult(best_hp, float(best_loss), model, trace)


def loss_surface(
    X,
    spec: KernelSpec,
    q0_kind: str,
    M: int,
    lam_grid: Sequence[float],
    sigma_grid: Sequence[float],
    seed=None,
    q0: BaseDensity | None = None,
    max_rows: int | None = None,
    train_fraction: float = 0.5,
) -> LossSurface:
    """Validated loss on a (lambda x sigma) grid using one fixed split and one feature draw.

    Seeds are derived exactly as in ``tune``, so a grid-mode ``tune`` with the
    same seed, grids and ``grid_max_rows`` sees the same split and features.
    """
    if len(lam_grid) == 0 or len(sigma_grid) == 0:
        raise InvalidSpecError("grids must be non-empty")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    fmap_seed, q0_seed, split_ss, _ = _seeds(seed)
    fmap = sample_feature_map(spec, X.shape[1], M, fmap_seed)
    q0 = _resolve_q0(q0, q0_kind, X, q0_seed)
    tr, va = split_indices(X.shape[0], split_ss, max_rows, train_fraction)
    L = np.empty((len(lam_grid), len(sigma_grid)))
    for i, lam in enumerate(lam_grid):
        for j, sig in enumerate(sigma_grid):
            L[i, j] = fit_validate(fmap, q0, X[tr], X[va], Hyperparams(float(lam), float(sig), fmap.spec.lengthscales))
    return LossSurface(L, tuple(float(v) for v in lam_grid), tuple(float(v) for v in sigma_grid))
