"""End-to-end fit and evaluation used by the command-line front end and benchmarks."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .base_density import fit_q0
from .baselines import fit_exact_kernel, fit_nystrom, taylor_dsm_fit
from .config import MalaSection, MethodConfig
from .convolution import NoiseSpec, build_system
from .errors import EstimationError, InvalidSpecError
from .features import KernelSpec, sample_feature_map
from .metrics import avg_log_likelihood, fisher_divergence, fssd_test, wasserstein1
from .model import DensityModel, sm_loss_direct
from .samplers import MalaConfig, mala_sample
from .solver import FitConfig, fit_dsm, fit_finite_K, fit_sm
from .synthetic import make_distribution
from .tuning import TuneConfig, tune

log = logging.getLogger(__name__)


@dataclass
class FitOutcome:
    model: object
    hyper: dict
    wall_time: float
    train_idx: np.ndarray
    val_idx: np.ndarray


def kernel_spec(cfg: MethodConfig, d: int) -> KernelSpec:
    if cfg.kernel.family == "arccos":
        return KernelSpec.arccos()
    ls = cfg.kernel.lengthscales or [1.0]
    if len(ls) not in (1, d):
        raise InvalidSpecError(f"expected 1 or {d} lengthscales, got {len(ls)}")
    return KernelSpec.rbf(ls, d)


def sm_loss(model, X) -> float:
    """Sample score-matching loss of any fitted model."""
    if isinstance(model, DensityModel):
        return model.validation_sm_loss(X).total
    return sm_loss_direct(model, X)


def split(n: int, fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    k = int(round(fraction * n))
    return np.sort(perm[k:]), np.sort(perm[:k])


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def fit_method(X, cfg: MethodConfig, seed: int, standardize: bool = False):
    """Fit one configured method to ``X``; returns ``(model, hyperparameters)``."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    s_fmap, s_q0, s_tune, s_z, s_aux = (_seed_int(s) for s in np.random.SeedSequence(seed).spawn(5))
    shift = scale = None
    if standardize:
        if cfg.method not in ("dsm", "sm", "finite_k", "taylor"):
            raise InvalidSpecError("standardization is only supported for random-feature models")
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        X = (X - shift) / scale
    spec = kernel_spec(cfg, d)
    q0 = fit_q0(cfg.q0.kind, X, k=cfg.q0.k, seed=s_q0)
    sigma = 0.0 if cfg.method == "sm" else cfg.sigma
    hyper = {"method": cfg.method, "lam": cfg.lam, "sigma": sigma, "M": cfg.M}
    if spec.family == "rbf":
        hyper["lengthscales"] = list(spec.lengthscales)

    if cfg.method in ("dsm", "sm") and cfg.tune.enabled:
        t = cfg.tune
        tcfg = TuneConfig(
            iterations=t.iterations,
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            optimizer=t.optimizer,
            lam_grid=tuple(t.lam_grid),
            sigma_grid=tuple(t.sigma_grid) if cfg.method == "dsm" else (0.0,),
            lengthscale_grid=tuple(t.lengthscale_grid),
            seed=s_tune,
            tune_sigma=cfg.method == "dsm",
            tune_lengthscales=t.tune_lengthscales,
            n_z=cfg.n_z,
        )
        res = tune(X, spec, cfg.q0.kind, cfg.M, tcfg, lam0=cfg.lam, sigma0=sigma, q0=q0)
        model = res.model
        if not cfg.normalize or not q0.normalizable:
            model = replace(model, log_Z=None, log_Z_se=None)
        hyper.update(lam=res.best.lam, sigma=res.best.sigma, best_validation_loss=res.best_loss)
        if res.best.lengthscales is not None:
            hyper["lengthscales"] = list(res.best.lengthscales)
        hyper["tune_trace"] = res.trace
        if shift is not None:
            model = replace(model, shift=shift, scale=scale)
        return model, hyper

    if cfg.method in ("dsm", "sm", "finite_k", "taylor"):
        fmap = sample_feature_map(spec, d, cfg.M, s_fmap)
        noise = NoiseSpec(sigma)
        fc = FitConfig(cfg.lam, noise)
        if cfg.method == "dsm":
            coeffs = fit_dsm(build_system(fmap, X, noise, q0), fc)
        elif cfg.method == "sm":
            coeffs = fit_sm(fmap, X, q0, fc)
        elif cfg.method == "finite_k":
            coeffs = fit_finite_K(fmap, X, noise, q0, fc, cfg.K, seed=s_aux)
            hyper["K"] = cfg.K
        else:
            coeffs = taylor_dsm_fit(fmap, X, q0, cfg.lam, sigma)
        model = DensityModel(coeffs, fmap, q0, shift=shift, scale=scale)
        if cfg.normalize and q0.normalizable:
            model = model.with_normalizer(cfg.n_z, s_z)
        return model, hyper

    if cfg.method == "nystrom":
        hyper["M_inducing"] = min(cfg.M_inducing, n)
        model = fit_nystrom(X, spec, hyper["M_inducing"], cfg.lam, NoiseSpec(sigma), seed=s_aux, q0=q0)
        return model, hyper
    if cfg.method == "exact":
        return fit_exact_kernel(X, spec, cfg.lam, q0), hyper
    raise InvalidSpecError(f"unknown method {cfg.method!r}")


def fit_with_split(X, cfg: MethodConfig, seed: int, validation_fraction: float, standardize: bool) -> FitOutcome:
    ss_split, ss_fit = np.random.SeedSequence(seed).spawn(2)
    tr, va = split(X.shape[0], validation_fraction, ss_split)
    if tr.size < 2:
        raise InvalidSpecError("too few training rows after the validation split")
    t0 = time.perf_counter()
    model, hyper = fit_method(X[tr], cfg, _seed_int(ss_fit), standardize)
    wall = time.perf_counter() - t0
    return FitOutcome(model, hyper, wall, tr, va)


def fit_report(outcome: FitOutcome, X) -> dict:
    model = outcome.model
    train_loss = sm_loss(model, X[outcome.train_idx])
    val_loss = sm_loss(model, X[outcome.val_idx]) if outcome.val_idx.size else None
    if not np.isfinite(train_loss) or (val_loss is not None and not np.isfinite(val_loss)):
        raise EstimationError(f"non-finite score-matching loss (train {train_loss}, validation {val_loss})")
    hyper = {k: v for k, v in outcome.hyper.items() if k != "tune_trace"}
    return {
        "train_loss": train_loss,
        "validation_loss": val_loss,
        "wall_time": outcome.wall_time,
        "hyperparameters": hyper,
        "n_train": int(outcome.train_idx.size),
        "validation_indices": [int(i) for i in outcome.val_idx],
    }


# ------------------------------------------------------------- evaluation


def _target(model):
    if isinstance(model, DensityModel):
        return model.logp_and_grad
    return lambda Y: (model.log_density(Y), model.score(Y))


def mala_draws(model, data, cfg: MalaSection, seed) -> np.ndarray:
    d = np.asarray(data).shape[1]
    mcfg = MalaConfig(cfg.step_size, cfg.chain_length, cfg.burn_in, cfg.n_chains, "from_data", seed)
    res = mala_sample(_target(model), d, mcfg, data=data)
    flat = res.samples.reshape(-1, d)
    if flat.shape[0] > cfg.n_samples:
        pick = np.linspace(0, flat.shape[0] - 1, cfg.n_samples).round().astype(int)
        flat = flat[pick]
    return flat


def evaluate(
    model,
    X,
    metrics,
    seed: int,
    family: str | None = None,
    family_params: dict | None = None,
    mala: MalaSection = MalaSection(),
    n_bootstrap: int = 1000,
    X_train=None,
) -> list[tuple[str, float, str]]:
    """Rows ``(metric, value, status)``; metrics that cannot be computed are ``skipped``."""
    X = np.asarray(X, dtype=float)
    dist = make_distribution(family, family_params or {}) if family else None
    rows = []
    ss = np.random.SeedSequence(seed).spawn(len(metrics) + 1)
    for name, mss in zip(metrics, ss):
        mseed = _seed_int(mss)
        if name in ("fisher", "fisher_train"):
            data = X if name == "fisher" else X_train
            if dist is None or data is None or X.shape[1] != 2:
                log.warning("metric %s skipped: needs synthetic ground truth", name)
                rows.append((name, float("nan"), "skipped"))
                continue
            mask = dist.in_support(data)
            rows.append((name, fisher_divergence(model.score, dist.score, data, mask), "ok"))
        elif name == "loglik":
            if not isinstance(model, DensityModel) or model.log_Z is None:
                log.warning("metric loglik skipped: model has no normalizer")
                rows.append((name, float("nan"), "skipped"))
                continue
            rows.append((name, avg_log_likelihood(model, X), "ok"))
        elif name == "fssd":
            res = fssd_test(model.score, X, n_bootstrap=n_bootstrap, seed=mseed)
            rows.append(("fssd_statistic", res.statistic, "ok"))
            rows.append(("fssd_p_value", res.p_value, "ok"))
        elif name == "w1":
            draws = mala_draws(model, X if X_train is None else X_train, mala, mseed)
            rows.append((name, wasserstein1(draws, X, seed=mseed, max_points=mala.n_samples), "ok"))
        else:
            raise InvalidSpecError(f"unknown metric {name!r}")
    return rows
