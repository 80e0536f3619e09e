import math

import numpy as np
import pytest

from jawkit.empdist import PredictionInterval
from jawkit.infer import (
    LooArtifacts,
    LooFitError,
    compute_cv,
    compute_loo,
    compute_split,
    cv_folds,
    cv_plus_interval,
    jackknife_interval,
    jackknife_mm_interval,
    jackknife_plus_interval,
    jaw_interval,
    naive_interval,
    split_interval,
    weighted_split_interval,
    SplitArtifacts,
)
from jawkit.predictors import ConstantMean, Dataset, Ridge, exact_loo_ridge
from jawkit.shift import NormalizedWeights, normalize

INF = math.inf


@pytest.fixture
def mean3():
    data = Dataset(np.zeros((3, 1)), [0.0, 3.0, 6.0])
    return data, compute_loo(ConstantMean(), data, np.zeros((1, 1)))


def ridge_instance(rng, n=None, d=None):
    n = n or int(rng.integers(5, 51))
    d = d or int(rng.integers(1, 4))
    X = rng.normal(size=(n, d))
    y = X @ rng.normal(size=d) + rng.normal(size=n)
    data = Dataset(X, y)
    return data, compute_loo(Ridge(0.5), data, rng.normal(size=(3, d)))


class TestComputeLoo:
    def test_constant_mean(self, mean3):
        _, loo = mean3
        np.testing.assert_allclose(loo.loo_pred_train, [4.5, 3.0, 1.5])
        np.testing.assert_allclose(loo.loo_residuals, [4.5, 0.0, 4.5])
        assert loo.full_pred_test.tolist() == [3.0]

    def test_two_identical_rows(self):
        data = Dataset([[1.0], [1.0]], [2.0, 5.0])
        loo = compute_loo(ConstantMean(), data, [[0.0]])
        np.testing.assert_array_equal(loo.loo_pred_train, [5.0, 2.0])

    def test_ridge_matches_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            data, loo = ridge_instance(rng)
            for i in range(data.n):
                p = exact_loo_ridge(data, 0.5, i)
                assert loo.loo_pred_train[i] == pytest.approx(data.X[i] @ p.theta, rel=1e-10, abs=1e-12)

    def test_workers_same_result(self):
        rng = np.random.default_rng(1)
        data, loo = ridge_instance(rng, n=12)
        other = compute_loo(Ridge(0.5), data, np.zeros((3, data.d)) + 0.0, workers=3)
        np.testing.assert_array_equal(loo.loo_residuals, other.loo_residuals)

    def test_failures_annotated(self):
        class Broken(ConstantMean):
            def fit(self, data, seed=0):
                if data.n < 3 and 9.0 not in data.y:
                    raise RuntimeError("boom")
                return super().fit(data, seed)
        with pytest.raises(LooFitError) as info:
            compute_loo(Broken(), Dataset(np.zeros((3, 1)), [0.0, 1.0, 9.0]), [[0.0]])
        assert info.value.index == 2

    def test_residual_invariant(self):
        rng = np.random.default_rng(2)
        data, loo = ridge_instance(rng)
        np.testing.assert_allclose(loo.loo_residuals, np.abs(data.y - loo.loo_pred_train), atol=1e-9)

    def test_single_row_rejected(self):
        with pytest.raises(ValueError):
            compute_loo(ConstantMean(), Dataset([[0.0]], [1.0]), [[0.0]])


class TestIntervalsExamples:
    def test_jaw(self, mean3):
        _, loo = mean3
        assert jaw_interval(loo, NormalizedWeights.uniform(3), 0.5) == PredictionInterval(-3, 6)

    def test_jackknife_plus(self, mean3):
        assert jackknife_plus_interval(mean3[1], 0.5) == PredictionInterval(-3, 6)

    def test_jackknife(self, mean3):
        assert jackknife_interval(mean3[1], 0.5) == PredictionInterval(-1.5, 7.5)

    def test_jackknife_mm(self, mean3):
        assert jackknife_mm_interval(mean3[1], 0.5) == PredictionInterval(-3, 9)

    def test_naive(self, mean3):
        data, _ = mean3
        assert naive_interval(ConstantMean(), data, [[0.0]], 0.5) == [PredictionInterval(0, 6)]

    def test_tail_dominates(self, mean3):
        _, loo = mean3
        iv = jaw_interval(loo, normalize([1, 1, 1], 3), 0.4)
        assert iv == PredictionInterval(-INF, INF)

    def test_small_alpha_infinite(self, mean3):
        assert jackknife_plus_interval(mean3[1], 1e-6) == PredictionInterval(-INF, INF)

    def test_zero_residuals_jackknife(self):
        loo = LooArtifacts([1.0, 2.0, 3.0], [[1.0], [2.0], [3.0]], [0.0, 0.0, 0.0], [2.5])
        assert jackknife_interval(loo, 0.3) == PredictionInterval(2.5, 2.5)

    def test_raw_weight_pair(self, mean3):
        _, loo = mean3
        assert jaw_interval(loo, ([2, 2, 2], 2), 0.5) == PredictionInterval(-3, 6)

    def test_length_mismatch(self, mean3):
        with pytest.raises(ValueError):
            jaw_interval(mean3[1], NormalizedWeights.uniform(4), 0.5)

    @pytest.mark.parametrize("alpha", [0.0, 1.0])
    def test_alpha_range(self, mean3, alpha):
        with pytest.raises(ValueError):
            jackknife_plus_interval(mean3[1], alpha)

    def test_interpolating_naive(self):
        data = Dataset([[1.0, 0.0], [0.0, 1.0]], [2.0, -1.0])
        iv = naive_interval(Ridge(1e-12), data, [[1.0, 1.0]], 0.4)[0]
        assert iv.width == pytest.approx(0.0, abs=1e-9)


class TestSplit:
    def test_example(self):
        art = SplitArtifacts(np.arange(3), np.array([1.0, 2.0, 3.0]), np.array([10.0]))
        assert split_interval(art, 0.25) == PredictionInterval(7.0, 13.0)

    def test_equal_residuals(self):
        art = SplitArtifacts(np.arange(5), np.full(5, 0.7), np.array([1.0]))
        iv = split_interval(art, 0.2)
        assert iv.lower == pytest.approx(0.3) and iv.upper == pytest.approx(1.7)

    def test_weighted_uniform_reduction(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            data, _ = ridge_instance(rng)
            art = compute_split(Ridge(0.5), data, rng.normal(size=(2, data.d)), seed=4)
            for alpha in (0.1, 0.3):
                assert weighted_split_interval(art, np.full(data.n, 3.0), 3.0, alpha, 1) == \
                    split_interval(art, alpha, 1)

    def test_half_split_sizes(self):
        rng = np.random.default_rng(5)
        data, _ = ridge_instance(rng, n=11)
        art = compute_split(Ridge(0.5), data, np.zeros((1, data.d)))
        assert art.residuals.size == 6


class TestCvPlus:
    def test_folds_deterministic(self):
        a = cv_folds(20, 4, seed=3)
        b = cv_folds(20, 4, seed=3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert sorted(np.concatenate(a).tolist()) == list(range(20))

    @pytest.mark.parametrize("k", [1, 6])
    def test_fold_range(self, k):
        with pytest.raises(ValueError):
            cv_folds(5, k, 0)

    def test_k_equals_n_is_jackknife_plus(self):
        rng = np.random.default_rng(6)
        data, loo = ridge_instance(rng, n=15)
        test_X = rng.normal(size=(3, data.d))
        loo = compute_loo(Ridge(0.5), data, test_X)
        cv = compute_cv(Ridge(0.5), data, test_X, k=15, seed=2)
        for j in range(3):
            assert cv_plus_interval(cv, 0.2, j) == jackknife_plus_interval(loo, 0.2, j)

    def test_two_folds_by_hand(self):
        y = np.array([0.0, 1.0, 2.0, 10.0])
        data = Dataset(np.zeros((4, 1)), y)
        folds = cv_folds(4, 2, seed=0)
        cv = compute_cv(ConstantMean(), data, [[0.0]], k=2, seed=0)
        mu = np.empty(4)
        for f in folds:
            mu[f] = np.delete(y, f).mean()
        lo = np.sort(mu - np.abs(y - mu))
        hi = np.sort(mu + np.abs(y - mu))
        # alpha = 0.4 with 1/5 masses: smallest lower atom, 3rd smallest upper atom
        assert cv_plus_interval(cv, 0.4) == PredictionInterval(lo[0], hi[2])


class TestInvariants:
    def test_uniform_jaw_equals_jackknife_plus(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            data, loo = ridge_instance(rng)
            w = normalize(np.ones(data.n), 1.0)
            for j in range(3):
                a = jaw_interval(loo, w, 0.1, j)
                b = jackknife_plus_interval(loo, 0.1, j)
                for u, v in ((a.lower, b.lower), (a.upper, b.upper)):
                    assert u == v or abs(u - v) <= 1e-12

    def test_mm_contains_plus(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            _, loo = ridge_instance(rng)
            for alpha in (0.05, 0.1, 0.3):
                assert jackknife_mm_interval(loo, alpha).contains_interval(
                    jackknife_plus_interval(loo, alpha))

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            data, loo = ridge_instance(rng)
            w = normalize(rng.exponential(size=data.n), float(rng.exponential()))
            art = compute_split(Ridge(0.5), data, rng.normal(size=(1, data.d)))
            a1, a2 = sorted(rng.uniform(0.01, 0.6, size=2))
            methods = [
                lambda a: jaw_interval(loo, w, a),
                lambda a: jackknife_plus_interval(loo, a),
                lambda a: jackknife_interval(loo, a),
                lambda a: jackknife_mm_interval(loo, a),
                lambda a: split_interval(art, a),
                lambda a: weighted_split_interval(art, np.ones(data.n), 2.0, a),
                lambda a: naive_interval(Ridge(0.5), data, np.zeros((1, data.d)), a)[0],
            ]
            for f in methods:
                assert f(a1).contains_interval(f(a2))

    def test_affine(self):
        rng = np.random.default_rng(10)
        _, loo = ridge_instance(rng)
        iv = jackknife_plus_interval(loo, 0.1)
        scaled = jackknife_plus_interval(loo.affine(2.0, 1.0), 0.1)
        assert scaled.lower == pytest.approx(2 * iv.lower + 1) and scaled.upper == pytest.approx(2 * iv.upper + 1)
