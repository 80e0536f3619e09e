import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jawkit.shift import normalize
from jawkit.weights_est import (
    RatioEstimator,
    SeparationError,
    estimated_weight,
    fit_ratio,
    odds_from_probability,
)


def estimator_with_probability(p, eps=0.01):
    # one feature, x=0, so p(x) = sigmoid(intercept)
    return RatioEstimator(np.zeros(1), float(np.log(p / (1 - p))), eps)


class TestEstimatedWeight:
    def test_even(self):
        assert estimated_weight(estimator_with_probability(0.5), [0.0]) == pytest.approx(1.0)

    def test_odds(self):
        assert estimated_weight(estimator_with_probability(0.8), [0.0]) == pytest.approx(4.0)

    def test_clip(self):
        assert estimated_weight(estimator_with_probability(0.9999), [0.0]) == pytest.approx(99.0)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            estimated_weight(estimator_with_probability(0.5), [0.0, 1.0])

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(1e-3, 0.49))
    def test_monotone_and_bounded(self, a, b, eps):
        lo, hi = sorted((a, b))
        w = odds_from_probability(1 / (1 + np.exp(-np.array([lo, hi]))), eps)
        assert w[0] <= w[1]
        assert eps / (1 - eps) * (1 - 1e-12) <= w[0] and w[1] <= (1 - eps) / eps * (1 + 1e-12)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            RatioEstimator(np.zeros(1), 0.0, 0.5)


class TestFit:
    def test_identical_distributions(self):
        rng = np.random.default_rng(0)
        est = fit_ratio(rng.normal(size=(2000, 1)), rng.normal(size=(2000, 1)))
        w = est.weights(rng.normal(size=(5000, 1)))
        assert np.mean((w >= 0.5) & (w <= 2.0)) >= 0.95

    def test_gaussian_mean_shift_slope(self):
        rng = np.random.default_rng(1)
        est = fit_ratio(rng.normal(size=(2000, 1)), rng.normal(1.0, 1.0, size=(2000, 1)))
        assert 0.75 <= est.coef[0] <= 1.25
        # true log-ratio is x - 1/2
        assert est.intercept == pytest.approx(-0.5, abs=0.15)

    def test_separation(self):
        train = np.c_[np.zeros(30)]
        test = np.c_[np.ones(30)]
        with pytest.raises(SeparationError):
            fit_ratio(train, test)

    def test_class_size_correction_cancels(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(300, 2))
        B = rng.normal(0.5, 1.0, size=(100, 2))
        est = fit_ratio(A, B, clip_epsilon=1e-6)
        w = est.weights(A)
        raw = np.exp(est.logit(A) - np.log(3.0))
        a, b = normalize(w[:-1], w[-1]), normalize(raw[:-1], raw[-1])
        np.testing.assert_allclose(a.train, b.train, rtol=1e-9)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            fit_ratio(np.zeros((3, 2)), np.zeros((3, 1)))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        A, B = rng.normal(size=(50, 3)), rng.normal(0.3, 1, size=(40, 3))
        e1, e2 = fit_ratio(A, B, seed=1), fit_ratio(A, B, seed=2)
        np.testing.assert_array_equal(e1.coef, e2.coef)
