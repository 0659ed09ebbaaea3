import numpy as np
import pytest

from kdsm import tuning
from kdsm.base_density import BaseDensity
from kdsm.errors import InvalidSpecError
from kdsm.features import KernelSpec, sample_feature_map
from kdsm.synthetic import make_distribution, sample
from kdsm.tuning import Hyperparams, TuneConfig, fit_validate, loss_surface, split_indices, tune


def _gauss(n=2000, d=1, seed=0):
    return np.random.default_rng(seed).standard_normal((n, d))


def test_grid_picks_lower_validation_loss():
    X = _gauss()
    cfg = TuneConfig(optimizer="grid", lam_grid=(1e-3, 1e-1), sigma_grid=(0.0,), seed=1, n_z=1000)
    res = tune(X, KernelSpec.rbf(1.0, 1), "gaussian", 64, cfg)
    losses = {row["lam"]: row["loss"] for row in res.trace}
    assert len(losses) == 2
    assert res.best_loss == min(losses.values()) and losses[res.best.lam] == res.best_loss
    assert res.model.log_Z is not None


def test_grid_exhaustive_with_lengthscales():
    X = _gauss(600, 2, seed=2)
    cfg = TuneConfig(
        optimizer="grid", lam_grid=(1e-4, 1e-2), sigma_grid=(0.0, 0.2), lengthscale_grid=(0.5, 2.0), seed=3, n_z=100
    )
    res = tune(X, KernelSpec.rbf(1.0, 2), "gaussian", 32, cfg)
    assert len(res.trace) == 8
    assert res.best_loss == min(r["loss"] for r in res.trace)


def test_single_cell_surface_equals_direct_fit_validate():
    X = _gauss(500, 2, seed=4)
    spec = KernelSpec.rbf(1.0, 2)
    q0 = BaseDensity.gaussian(np.zeros(2), 4 * np.eye(2))
    surf = loss_surface(X, spec, "gaussian", 64, [1e-2], [0.1], seed=5, q0=q0)
    fmap_seed, _, split_ss, _ = tuning._seeds(5)
    fm = sample_feature_map(spec, 2, 64, fmap_seed)
    tr, va = split_indices(500, split_ss)
    ref = fit_validate(fm, q0, X[tr], X[va], Hyperparams(1e-2, 0.1, fm.spec.lengthscales))
    assert surf.losses.shape == (1, 1) and surf.losses[0, 0] == ref


def test_surface_finite_for_gaussian_data():
    X = _gauss(1000, 2, seed=6)
    surf = loss_surface(X, KernelSpec.rbf(1.0, 2), "gaussian", 64, np.logspace(-4, 0, 5), [0.0, 0.1, 0.5], seed=7)
    assert np.all(np.isfinite(surf.losses))
    assert len(surf.rows()) == 15


def test_grid_tune_matches_surface_argmin():
    X = _gauss(800, 2, seed=8)
    lam_grid, sigma_grid = (1e-4, 1e-3, 1e-2, 1e-1), (0.0, 0.05, 0.2)
    spec = KernelSpec.rbf(1.0, 2)
    surf = loss_surface(X, spec, "gaussian", 64, lam_grid, sigma_grid, seed=9, max_rows=512)
    cfg = TuneConfig(optimizer="grid", lam_grid=lam_grid, sigma_grid=sigma_grid, seed=9, grid_max_rows=512, n_z=100)
    res = tune(X, spec, "gaussian", 64, cfg)
    assert (res.best.lam, res.best.sigma) == surf.argmin()
    assert res.best_loss == np.nanmin(surf.losses)


def test_hypergradient_central_difference_matches_five_point_stencil():
    X = _gauss(400, 2, seed=10)
    q0 = BaseDensity.gaussian(np.zeros(2), 4 * np.eye(2))
    fm = sample_feature_map(KernelSpec.rbf(1.0, 2), 2, 64, seed=11)
    Xt, Xv = X[:200], X[200:]
    t0 = np.log(3e-3)

    def L(t):
        return fit_validate(fm, q0, Xt, Xv, Hyperparams(float(np.exp(t)), 0.1, fm.spec.lengthscales))

    h = 1e-3
    central = (L(t0 + h) - L(t0 - h)) / (2 * h)
    H = 1e-2
    stencil = (-L(t0 + 2 * H) + 8 * L(t0 + H) - 8 * L(t0 - H) + L(t0 - 2 * H)) / (12 * H)
    assert abs(central - stencil) <= 1e-3 * abs(stencil)


def test_adam_trace_reproducible_and_best_is_minimum():
    X = _gauss(600, 2, seed=12)
    cfg = TuneConfig(iterations=5, seed=13, n_z=100)
    a = tune(X, KernelSpec.rbf(1.0, 2), "gaussian", 32, cfg)
    b = tune(X, KernelSpec.rbf(1.0, 2), "gaussian", 32, cfg)
    assert a.trace == b.trace
    assert a.best_loss == min(r["loss"] for r in a.trace)
    assert {"iteration", "lam", "sigma", "ls_1", "ls_2", "loss"} <= set(a.trace[0])


def test_adam_moves_hyperparameters_within_bounds():
    X = _gauss(600, 1, seed=14)
    res = tune(X, KernelSpec.rbf(1.0, 1), "gaussian", 32, TuneConfig(iterations=10, seed=15, n_z=100))
    lams = [r["lam"] for r in res.trace]
    assert len(set(lams)) > 1
    assert all(tuning.LAM_BOUNDS[0] <= v <= tuning.LAM_BOUNDS[1] for v in lams)


def test_funnel_noise_minimum_is_wide():
    # per seed the loss at the best sigma stays within 5% of the loss at sigma = 0; checked on 8 of 10 seeds
    sig = [0.0] + list(np.logspace(-3, 0, 13))
    close = 0
    for s in range(10):
        X = sample(make_distribution("funnel"), 2000, seed=s)
        L = loss_surface(X, KernelSpec.rbf(1.0, 2), "gaussian", 256, [1e-3], sig, seed=s).losses[0]
        close += abs(np.nanmin(L) - L[0]) <= 0.05 * abs(L[0])
    assert close >= 8


def test_invalid_configurations():
    with pytest.raises(InvalidSpecError):
        TuneConfig(iterations=0)
    with pytest.raises(InvalidSpecError):
        TuneConfig(learning_rate=0.0)
    with pytest.raises(InvalidSpecError):
        TuneConfig(optimizer="grid")
    with pytest.raises(InvalidSpecError):
        tune(_gauss(10), KernelSpec.rbf(1.0, 1), "gaussian", 8, TuneConfig())
    with pytest.raises(InvalidSpecError):
        loss_surface(_gauss(100), KernelSpec.rbf(1.0, 1), "gaussian", 8, [], [0.0])


def test_split_indices_disjoint():
    tr, va = split_indices(100, 0, max_rows=50)
    assert len(tr) == 25 and len(va) == 25 and not set(tr) & set(va)
