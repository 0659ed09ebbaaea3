"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""

import time

import numpy as np
import pytest

from kdsm.base_density import BaseDensity
from kdsm.baselines import fit_exact_kernel, fit_nystrom, mc_dsm_loss, taylor_dsm_fit, taylor_system
from kdsm.config import MethodConfig
from kdsm.convolution import NoiseSpec, build_system, build_system_arccos, build_system_rbf, mc_convolved_system
from kdsm.features import KernelSpec, eval_batch, features, partial, sample_feature_map
from kdsm.metrics import fisher_divergence, fssd_test, wasserstein1
from kdsm.model import DensityModel
from kdsm.pipeline import fit_method, sm_loss
from kdsm.samplers import MalaConfig, mala_sample
from kdsm.solver import FitConfig, fit_dsm, fit_finite_K
from kdsm.synthetic import FAMILIES, make_distribution, sample
from kdsm.tuning import loss_surface

from conftest import fd_grad, fd_laplacian, record_acceptance

pytestmark = pytest.mark.acceptance


def _within(est, ref, se, k=4.0):
    return np.abs(est - ref) <= k * se + 1e-12 * max(1.0, np.abs(ref).max())


def test_criterion_01_analytic_convolution_matches_monte_carlo():
    t0 = time.perf_counter()
    hits = {"rbf": [], "arccos": []}
    for inst in range(20):
        rng = np.random.default_rng(inst)
        M = int(rng.integers(2, 17))
        n = int(rng.integers(2, 33))
        d = int(rng.integers(1, 4))
        sigma = float(rng.uniform(0.05, 1.0))
        X = rng.normal(size=(n, d))
        q0 = (
            BaseDensity.gaussian(rng.normal(size=d) * 0.3, np.eye(d) * rng.uniform(0.5, 2.0))
            if inst % 2 == 0
            else BaseDensity.uniform(-6 * np.ones(d), 6 * np.ones(d))
        )
        fm = sample_feature_map(KernelSpec.rbf(rng.uniform(0.5, 2.0, d)), d, M, seed=inst)
        a = build_system_rbf(fm, X, sigma, q0)
        mc = mc_convolved_system(fm, X, sigma, q0, K=200_000, seed=1000 + inst)
        hits["rbf"] += [_within(mc.H, a.H, mc.H_se).ravel(), _within(mc.h, a.h, mc.h_se)]
        fa = sample_feature_map(KernelSpec.arccos(), d, M, seed=inst)
        a = build_system_arccos(fa, X, sigma)
        mc = mc_convolved_system(fa, X, sigma, K=200_000, seed=2000 + inst)
        hits["arccos"] += [_within(mc.H, a.H, mc.H_se).ravel(), _within(mc.h, a.h, mc.h_se)]
    frac = {k: float(np.mean(np.concatenate(v))) for k, v in hits.items()}
    ok = min(frac.values()) >= 0.95
    record_acceptance(
        1, ok, f"entries within 4 SE: rbf {frac['rbf']:.4f}, arccos {frac['arccos']:.4f} (need >= 0.95); "
        f"{time.perf_counter() - t0:.0f}s"
    )
    assert ok


def test_criterion_02_finite_K_converges_to_closed_form():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 1))
    fm = sample_feature_map(KernelSpec.rbf(1.0, 1), 1, 32, seed=0)
    q0 = BaseDensity.gaussian([0.0], [[4.0]])
    noise = NoiseSpec(0.2)
    cfg = FitConfig(1e-2, noise)
    b_inf = fit_dsm(build_system(fm, X, noise, q0), cfg).b
    Ks = [100, 1000, 10_000]
    errs = [
        np.mean([np.linalg.norm(fit_finite_K(fm, X, noise, q0, cfg, K, seed=s).b - b_inf) / np.linalg.norm(b_inf) for s in range(10)])
        for K in Ks
    ]
    slope = float(np.polyfit(np.log(Ks), np.log(errs), 1)[0])
    c0 = FitConfig(1e-2)
    a = fit_dsm(build_system(fm, X, 0.0, q0), c0).b
    b = fit_finite_K(fm, X, 0.0, q0, c0, K=5, seed=1).b
    zero_gap = float(np.max(np.abs(a - b)) / max(1.0, np.abs(a).max()))
    ok = -0.7 <= slope <= -0.3 and zero_gap <= 1e-12
    record_acceptance(
        2, ok, f"log-log slope {slope:.3f} (need -0.5 +/- 0.2), sigma=0 gap {zero_gap:.1e}; {time.perf_counter() - t0:.0f}s"
    )
    assert ok


def test_criterion_03_derivative_integrity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    errs = {}
    X = rng.normal(size=(60, 2))

    # features: every column's gradient and Laplacian
    for name, spec in [("rbf", KernelSpec.rbf([0.8, 1.3])), ("arccos", KernelSpec.arccos())]:
        fm = sample_feature_map(spec, 2, 12, seed=1)
        Y = X
        if name == "arccos":
            Y = X[np.all(np.abs(X @ fm.W.T) > 1e-2, axis=1)]
        batch = eval_batch(fm, Y)
        g_err, l_err = 0.0, 0.0
        for j in range(fm.M):
            fn = lambda Z, j=j: features(fm, Z)[:, j]  # noqa: E731
            grad = batch.dPhi[:, j].reshape(-1, 2)
            lap = batch.d2Phi[:, j].reshape(-1, 2).sum(axis=1)
            scale = max(1.0, np.abs(grad).max())
            g_err = max(g_err, np.max(np.abs(grad - fd_grad(fn, Y))) / scale)
            l_err = max(l_err, np.max(np.abs(lap - fd_laplacian(fn, Y))) / max(1.0, np.abs(lap).max()))
        errs[f"features/{name} grad"] = (g_err, 1e-5)
        errs[f"features/{name} lap"] = (l_err, 1e-4)
        assert Y.shape[0] >= 50

    # base densities
    q0s = {
        "gaussian": BaseDensity.gaussian([0.2, -0.1], [[1.2, 0.3], [0.3, 0.8]]),
        "gmm": BaseDensity.mixture([0.4, 0.6], [[-1, 0], [1, 0.5]], [np.eye(2) * 0.8, [[1.0, 0.2], [0.2, 0.5]]]),
    }
    for name, q in q0s.items():
        fd = fd_grad(q.logpdf, X)
        errs[f"q0/{name} grad"] = (np.max(np.abs(q.grad(X) - fd)) / np.abs(fd).max(), 1e-5)
        fl = fd_laplacian(q.logpdf, X)
        errs[f"q0/{name} lap"] = (np.max(np.abs(q.laplacian(X) - fl)) / np.abs(fl).max(), 1e-4)

    # fitted-style models with random coefficients
    for name, spec in [("rbf", KernelSpec.rbf([0.8, 1.3])), ("arccos", KernelSpec.arccos())]:
        fm = sample_feature_map(spec, 2, 20, seed=2)
        from kdsm.solver import Coefficients

        m = DensityModel(Coefficients(rng.normal(size=20)), fm, q0s["gmm"])
        Y = X if name == "rbf" else X[np.all(np.abs(X @ fm.W.T) > 1e-2, axis=1)]
        grad, lap = m.score_and_laplacian(Y)
        fd = fd_grad(m.log_density, Y)
        errs[f"model/{name} grad"] = (np.max(np.abs(grad - fd)) / np.abs(fd).max(), 1e-5)
        fl = fd_laplacian(m.log_density, Y)
        errs[f"model/{name} lap"] = (np.max(np.abs(lap - fl)) / max(1.0, np.abs(fl).max()), 1e-4)

    # synthetic log-densities on their full-support interiors
    for fam in FAMILIES:
        dist = make_distribution(fam)
        if not dist.full_support:
            continue
        Y = sample(dist, 60, seed=4)
        if fam.startswith("ring"):
            Y = Y[np.linalg.norm(Y, axis=1) > 0.2]
        fd = fd_grad(dist.logpdf, Y)
        errs[f"synthetic/{fam} grad"] = (float(np.max(np.abs(dist.score(Y) - fd) / np.maximum(np.abs(fd), 1.0))), 1e-5)

    worst = max(errs, key=lambda k: errs[k][0] / errs[k][1])
    ok = all(e <= tol for e, tol in errs.values())
    record_acceptance(
        3, ok, f"{len(errs)} derivative checks, worst {worst} rel err {errs[worst][0]:.1e} (tol {errs[worst][1]:.0e}); "
        f"{time.perf_counter() - t0:.0f}s"
    )
    assert ok


def _score_rmse(model, grid):
    err = model.score(grid) + grid
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def _select_lambda(fit, Xv, lams):
    best = None
    for lam in lams:
        m = fit(lam)
        v = sm_loss(m, Xv)
        if np.isfinite(v) and (best is None or v < best[0]):
            best = (v, m)
    return best[1]


def test_criterion_04_estimation_quality_on_gaussian_data():
    # protocol: N(0, I) data, q0 = N(0, 4I), lengthscale 4, lambda chosen by the sample
    # score-matching loss on a separate 1000-point draw, median over 5 seeds
    t0 = time.perf_counter()
    lams = np.logspace(-6, 0, 13)
    results = {}
    for d in (1, 2):
        g1 = np.linspace(-2, 2, 401 if d == 1 else 41)
        grid = g1[:, None] if d == 1 else np.column_stack([a.ravel() for a in np.meshgrid(g1, g1)])
        q0 = BaseDensity.gaussian(np.zeros(d), 4 * np.eye(d))
        spec = KernelSpec.rbf(4.0, d)
        per = {"sm": [], "dsm": [], "nystrom": [], "exact": []}
        for sd in range(5):
            rng = np.random.default_rng(100 * d + sd)
            X = rng.standard_normal((2000, d))
            Xv = rng.standard_normal((1000, d))
            fm = sample_feature_map(spec, d, 512, seed=sd)
            for name, sigma in (("sm", 0.0), ("dsm", 0.05)):
                noise = NoiseSpec(sigma)
                system = build_system(fm, X, noise, q0)
                m = _select_lambda(lambda lam: DensityModel(fit_dsm(system, FitConfig(lam, noise)), fm, q0), Xv, lams)
                per[name].append(_score_rmse(m, grid))
            m = _select_lambda(lambda lam: fit_nystrom(X, spec, 300, lam, seed=sd, q0=q0), Xv, lams)
            per["nystrom"].append(_score_rmse(m, grid))
            m = _select_lambda(lambda lam: fit_exact_kernel(X[:300], spec, lam, q0), Xv, lams)
            per["exact"].append(_score_rmse(m, grid))
        for name, v in per.items():
            results[(d, name)] = float(np.median(v))
    ok = all(v <= 0.15 for v in results.values())
    detail = ", ".join(f"{n}/{d}d {v:.3f}" for (d, n), v in results.items())
    failing = [f"{n}/{d}d" for (d, n), v in results.items() if v > 0.15]
    record_acceptance(
        4, ok, f"median score RMSE (need <= 0.15): {detail}"
        + (f"; failing: {', '.join(failing)}" if failing else "")
        + f"; {time.perf_counter() - t0:.0f}s"
    )
    assert ok


def test_criterion_05_dsm_beats_sm_on_cosine_data():
    # Fisher divergence on the training sample (the F_train row); both methods tuned by Adam
    t0 = time.perf_counter()
    dist = make_distribution("cosine")
    f = {"dsm": [], "sm": []}
    f_test = {"dsm": [], "sm": []}
    for s in range(10):
        X = sample(dist, 1000, seed=s)
        Xte = sample(dist, 2000, seed=1000 + s)
        for method in f:
            cfg = MethodConfig(method=method, M=100, tune={"enabled": True}, normalize=False)
            model, _ = fit_method(X, cfg, seed=s)
            f[method].append(fisher_divergence(model.score, dist.score, X))
            f_test[method].append(fisher_divergence(model.score, dist.score, Xte))
    med = {k: float(np.median(v)) for k, v in f.items()}
    med_te = {k: float(np.median(v)) for k, v in f_test.items()}
    ok = med["dsm"] < med["sm"]
    record_acceptance(
        5, ok, f"median F_train dsm {med['dsm']:.4f} vs sm {med['sm']:.4f} (need dsm < sm); "
        f"F_test dsm {med_te['dsm']:.4f} vs sm {med_te['sm']:.4f}; {time.perf_counter() - t0:.0f}s"
    )
    assert ok


def test_criterion_06_noise_minimum_separated_from_zero_on_uniform_data():
    t0 = time.perf_counter()
    lam_grid = np.logspace(-6, 0, 7)
    sigma_grid = [0.0] + list(np.logspace(-3, 0, 13))
    best = []
    for s in range(10):
        X = sample(make_distribution("uniform"), 1000, seed=s)
        surf = loss_surface(X, KernelSpec.rbf(0.5, 2), "uniform_box", 256, lam_grid, sigma_grid, seed=s)
        best.append(surf.argmin()[1])
    med = float(np.median(best))
    ok = med >= 0.01
    record_acceptance(
        6, ok, f"median argmin sigma {med:.3g} (need >= 0.01), per seed {[round(b, 3) for b in best]}; "
        f"{time.perf_counter() - t0:.0f}s"
    )
    assert ok


def _best_time(fn, repeats=3):
    out = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def test_criterion_07_rff_fit_faster_than_nystrom():
    t0 = time.perf_counter()
    n, d = 1500, 11
    rng = np.random.default_rng(7)
    A = rng.normal(size=(d, d)) / np.sqrt(d)
    X = rng.standard_normal((n, d)) @ A.T
    q0 = BaseDensity.gaussian(X.mean(axis=0), np.cov(X, rowvar=False))
    spec = KernelSpec.rbf(np.sqrt(d), d)
    ratios = {}
    for sigma in (0.1, 0.0):
        noise = NoiseSpec(sigma)

        def rff():
            fm = sample_feature_map(spec, d, 512, seed=0)
            fit_dsm(build_system(fm, X, noise, q0), FitConfig(1e-3, noise))

        def nys():
            fit_nystrom(X, spec, 300, 1e-3, noise, seed=0, q0=q0)

        ratios[sigma] = (_best_time(rff), _best_time(nys))
    t_rff, t_nys = ratios[0.1]
    ok = t_rff <= t_nys / 5
    z_rff, z_nys = ratios[0.0]
    record_acceptance(
        7, ok, f"sigma=0.1: DSM-RFF {t_rff:.3f}s vs Nystrom {t_nys:.3f}s (ratio {t_nys / t_rff:.1f}, need >= 5); "
        f"sigma=0 ratio {z_nys / z_rff:.1f} (informational); {time.perf_counter() - t0:.0f}s"
    )
    assert ok


def test_criterion_08_rff_converges_to_exact_kernel_solution():
    t0 = time.perf_counter()
    q0 = BaseDensity.gaussian([0.0], [[4.0]])
    spec = KernelSpec.rbf(1.0, 1)
    lam = 1e-2
    Ms = (64, 256, 1024, 4096)
    P = np.linspace(-3, 3, 200)[:, None]
    gaps = np.zeros(len(Ms))
    for s in range(5):
        X = np.random.default_rng(s).standard_normal((300, 1))
        fe = fit_exact_kernel(X, spec, lam, q0).f(P)
        for i, M in enumerate(Ms):
            fm = sample_feature_map(spec, 1, M, seed=s)
            system = build_system(fm, X, 0.0, q0)
            fr = features(fm, P) @ fit_dsm(system, FitConfig(lam)).b
            gaps[i] += np.mean((fr - fe) ** 2) / 5
    ok = bool(np.all(np.diff(gaps) < 0))
    record_acceptance(
        8, ok, f"mean squared f-gap over M {list(Ms)}: {', '.join(f'{g:.2e}' for g in gaps)} (need decreasing); "
        f"{time.perf_counter() - t0:.0f}s"
    )
    assert ok


def test_criterion_09_metric_and_sampler_calibration():
    t0 = time.perf_counter()
    cfg = MalaConfig(step_size=0.8, chain_length=20_000, burn_in=2000, n_chains=4, seed=0)
    x = mala_sample(lambda Y: (-0.5 * np.sum(Y * Y, axis=1), -Y), 1, cfg, x0=np.zeros((4, 1))).flat()[:, 0]
    mean, var = float(x.mean()), float(x.var())
    passes = sum(
        fssd_test(lambda Y: -Y, np.random.default_rng(s).standard_normal((2000, 2)), seed=s).p_value > 0.05 for s in range(10)
    )
    A = np.random.default_rng(1).normal(size=(100, 2))
    w_same = wasserstein1(A, A)
    w_pair = wasserstein1(np.zeros((1, 2)), np.array([[3.0, 4.0]]))
    ok = abs(mean) <= 0.05 and abs(var - 1) <= 0.1 and passes >= 8 and w_same == 0.0 and w_pair == 5.0
    record_acceptance(
        9, ok, f"MALA mean {mean:.4f} var {var:.4f}; FSSD null passes {passes}/10; W1(A,A)={w_same}, two-point {w_pair}; "
        f"{time.perf_counter() - t0:.0f}s"
    )
    assert ok


def test_criterion_10_taylor_matches_convolved_loss_and_solution():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    X = rng.normal(size=(20, 2))
    fm = sample_feature_map(KernelSpec.rbf([1.0, 1.5]), 2, 32, seed=10)
    q0 = BaseDensity.gaussian([0.1, 0.0], [[2.0, 0.3], [0.3, 1.5]])
    system = taylor_system(fm, X, q0, 0.05)
    rel = []
    for k in range(5):
        b = rng.normal(size=fm.M)
        est, _ = mc_dsm_loss(fm, X, q0, 0.05, b, K=100_000, seed=20 + k)
        rel.append(abs(system.loss(b) - est) / abs(est))
    Xb = rng.normal(size=(60, 2))
    conv = []
    for sigma in (0.2, 0.1, 0.05):
        noise = NoiseSpec(sigma)
        b_dsm = fit_dsm(build_system(fm, Xb, noise, q0), FitConfig(1e-3, noise)).b
        b_t = taylor_dsm_fit(fm, Xb, q0, 1e-3, sigma).b
        conv.append(float(np.linalg.norm(b_t - b_dsm) / np.linalg.norm(b_dsm)))
    ok = max(rel) <= 0.01 and conv[0] > conv[1] > conv[2]
    record_acceptance(
        10, ok, f"max rel loss diff {max(rel):.2e} (need <= 1e-2); |b_taylor - b_dsm|/|b_dsm| at sigma 0.2/0.1/0.05: "
        f"{', '.join(f'{c:.2e}' for c in conv)}; {time.perf_counter() - t0:.0f}s"
    )
    assert ok
