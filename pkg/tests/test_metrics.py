import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kdsm.base_density import BaseDensity
from kdsm.errors import DimensionMismatchError, InvalidSpecError, UnsupportedError
from kdsm.features import KernelSpec, sample_feature_map
from kdsm.metrics import avg_log_likelihood, fisher_divergence, fssd_test, median_distance, wasserstein1
from kdsm.model import DensityModel
from kdsm.solver import Coefficients


def neg(X):
    return -X


def _std_normal_model(d=2):
    fm = sample_feature_map(KernelSpec.rbf(1.0, d), d, 3, seed=0)
    return DensityModel(Coefficients(np.zeros(3)), fm, BaseDensity.gaussian(np.zeros(d), np.eye(d)), log_Z=0.0)


def test_fisher_identical_scores_is_zero():
    X = np.random.default_rng(0).normal(size=(100, 3))
    assert fisher_divergence(neg, neg, X) == 0.0


def test_fisher_scaled_gaussian_score():
    X = np.random.default_rng(1).standard_normal((100_000, 2))
    assert fisher_divergence(neg, lambda Y: -2 * Y, X) == pytest.approx(1.0, abs=0.02)


def test_fisher_mask_equals_manual_filter():
    X = np.random.default_rng(2).normal(size=(200, 2)) * 2
    mask = np.all(np.abs(X) <= 1.5, axis=1)
    a = fisher_divergence(neg, np.sin, X, support_mask=mask)
    assert a == fisher_divergence(neg, np.sin, X[mask])
    with pytest.raises(InvalidSpecError):
        fisher_divergence(neg, np.sin, X, support_mask=np.zeros(200, dtype=bool))


@given(st.integers(0, 10_000))
def test_fisher_nonnegative(seed):
    X = np.random.default_rng(seed).normal(size=(20, 2))
    assert fisher_divergence(np.cos, np.sin, X) >= 0


def test_avg_log_likelihood_at_origin():
    assert avg_log_likelihood(_std_normal_model(), np.zeros((1, 2))) == pytest.approx(-np.log(2 * np.pi))


def test_avg_log_likelihood_matches_entropy():
    X = np.random.default_rng(3).standard_normal((100_000, 2))
    assert avg_log_likelihood(_std_normal_model(), X) == pytest.approx(-(1 + np.log(2 * np.pi)), abs=0.02)


def test_avg_log_likelihood_needs_normalizer():
    m = _std_normal_model()
    m = DensityModel(m.coeffs, m.fmap, m.q0)
    with pytest.raises(UnsupportedError):
        avg_log_likelihood(m, np.zeros((1, 2)))


def test_fssd_null_calibration():
    passes = sum(
        fssd_test(neg, np.random.default_rng(s).standard_normal((2000, 2)), seed=s).p_value > 0.05
        for s in range(10)
    )
    assert passes >= 8


def test_fssd_size_over_many_draws():
    p = np.array([
        fssd_test(neg, np.random.default_rng(1000 + s).standard_normal((500, 2)), n_bootstrap=500, seed=s).p_value
        for s in range(200)
    ])
    # binomial(200, 0.05) has sd ~0.015
    assert np.mean(p <= 0.05) <= 0.05 + 3 * 0.0154


def test_fssd_power():
    shifted = lambda Y: -(Y - 3.0)  # noqa: E731
    for s in range(10):
        X = np.random.default_rng(20 + s).standard_normal((2000, 2))
        assert fssd_test(shifted, X, seed=s).p_value < 0.01


def test_fssd_estimate_shrinks_with_n():
    # statistic is n * FSSD^2; the FSSD^2 estimate itself goes to 0 under the true model
    med = []
    for n in (500, 2000, 8000):
        vals = [
            abs(fssd_test(neg, np.random.default_rng(30 + s).standard_normal((n, 2)), n_bootstrap=10, seed=s).statistic) / n
            for s in range(10)
        ]
        med.append(np.median(vals))
    assert med[0] > med[1] > med[2]


def test_fssd_permutation_invariance():
    X = np.random.default_rng(4).normal(size=(300, 2)) + 0.3
    a = fssd_test(neg, X, seed=5)
    b = fssd_test(neg, X[np.random.default_rng(6).permutation(300)], seed=5)
    assert a.statistic == pytest.approx(b.statistic, rel=1e-12)
    assert a.p_value == b.p_value


def test_fssd_result_fields_and_errors():
    r = fssd_test(neg, np.random.default_rng(7).normal(size=(50, 2)), J=3, n_bootstrap=99, seed=0)
    assert 0 <= r.p_value <= 1 and np.isfinite(r.statistic)
    assert (r.n_test_locations, r.n_bootstrap) == (3, 99) and r.kernel_lengthscale > 0
    with pytest.raises(InvalidSpecError):
        fssd_test(neg, np.zeros((5, 2)))


def test_median_distance_simple():
    assert median_distance(np.array([[0.0], [1.0], [3.0]])) == 2.0


def test_w1_identical_and_single_pair():
    A = np.random.default_rng(8).normal(size=(50, 2))
    assert wasserstein1(A, A) == 0.0
    assert wasserstein1(np.zeros((1, 2)), np.array([[3.0, 4.0]])) == 5.0


@given(st.integers(0, 10_000))
def test_w1_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.normal(size=(15, 2)) for _ in range(3))
    assert wasserstein1(A, B) == wasserstein1(B, A)
    assert wasserstein1(A, C) <= wasserstein1(A, B) + wasserstein1(B, C) + 1e-9


def test_w1_decreases_with_n():
    med = []
    for n in (250, 1000):
        vals = []
        for s in range(10):
            rng = np.random.default_rng(40 + s)
            vals.append(wasserstein1(rng.standard_normal((n, 2)), rng.standard_normal((n, 2))))
        med.append(np.median(vals))
    assert med[0] > med[1]


def test_w1_errors_and_subsampling():
    with pytest.raises(InvalidSpecError):
        wasserstein1(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(DimensionMismatchError):
        wasserstein1(np.zeros((3, 2)), np.zeros((3, 3)))
    rng = np.random.default_rng(9)
    A, B = rng.normal(size=(40, 2)), rng.normal(size=(25, 2))
    assert wasserstein1(A, B, seed=1) == wasserstein1(A, B, seed=1)
