import numpy as np
import pytest

from jawkit.predictors import (
    MLP,
    ConstantMean,
    Dataset,
    MlpConfig,
    Ridge,
    UnsupportedFamilyError,
    exact_loo_ridge,
    make_predictor,
)


def random_data(rng, n=30, d=3):
    X = rng.normal(size=(n, d))
    y = X @ rng.normal(size=d) + 0.3 * rng.normal(size=n)
    return Dataset(X, y)


SMALL_MLP = MlpConfig(hidden_units=4, epochs=20, batch_size=8, learning_rate=1e-2)


class TestExamples:
    def test_constant_mean(self):
        m = ConstantMean()
        p = m.fit(Dataset(np.zeros((3, 1)), [0.0, 3.0, 6.0]))
        assert p.theta.tolist() == [3.0]
        assert m.predict(p, [[17.0]]).tolist() == [3.0]

    def test_ridge_near_interpolation(self):
        p = Ridge(1e-10).fit(Dataset([[1.0], [2.0], [3.0]], [1.0, 2.0, 3.0]))
        assert p.theta[0] == pytest.approx(1.0, abs=1e-8)

    def test_ridge_single_row(self):
        p = Ridge(1.0).fit(Dataset([[1.0]], [2.0]))
        assert p.theta[0] == pytest.approx(1.0, abs=1e-15)

    def test_ridge_predict(self):
        m = Ridge(1.0)
        assert m.predict(m.fit(Dataset([[1.0]], [2.0])), [[5.0]])[0] == pytest.approx(5.0)

    def test_ridge_singular_without_penalty(self):
        with pytest.raises(np.linalg.LinAlgError):
            Ridge(0.0).fit(Dataset([[1.0, 1.0], [2.0, 2.0]], [1.0, 2.0]))

    def test_predict_dim_mismatch(self):
        m = Ridge(1.0)
        p = m.fit(Dataset([[1.0, 0.0]], [1.0]))
        with pytest.raises(ValueError):
            m.predict(p, [[1.0, 2.0, 3.0]])

    def test_mlp_zero_weights(self):
        m = MLP(MlpConfig())
        theta = np.zeros(m.n_params(4))
        from jawkit.predictors import ModelParams
        assert m.predict(ModelParams(theta, "mlp"), np.ones((3, 4))).tolist() == [0.0] * 3

    def test_point_gradient_by_hand(self):
        m = Ridge(0.0)
        g = m.point_gradients(np.array([1.0]), np.array([[2.0]]), np.array([0.0]))
        assert g[0, 0] == pytest.approx(4.0)

    def test_regularizer_gradient_separate(self):
        m = Ridge(0.5)
        np.testing.assert_allclose(m.regularizer_gradient(np.array([2.0, -1.0]), 4), [4.0, -2.0])

    def test_constant_mean_not_differentiable(self):
        m = ConstantMean()
        with pytest.raises(UnsupportedFamilyError):
            m.estimating_equation(np.zeros(1), np.zeros((2, 1)), np.zeros(2))

    def test_hvp_zero(self):
        rng = np.random.default_rng(0)
        data = random_data(rng)
        m = Ridge(1.0)
        p = m.fit(data)
        np.testing.assert_array_equal(m.hvp(p, data.X, data.y, np.zeros(3)), 0.0)

    def test_factory(self):
        assert isinstance(make_predictor("ridge", 2.0), Ridge)
        assert make_predictor("mlp", 3.0).lam == 3.0
        with pytest.raises(ValueError):
            make_predictor("forest")


class TestExactLoo:
    def test_reduced_closed_form(self):
        p = exact_loo_ridge(Dataset([[1.0], [2.0]], [2.0, 4.0]), 1.0, 0)
        assert p.theta[0] == pytest.approx(1.6)

    def test_matches_refit(self):
        data = Dataset([[1.0], [2.0], [3.0]], [1.0, 2.0, 3.0])
        loo = exact_loo_ridge(data, 0.01, 1)
        ref = Ridge(0.01).fit(data.subset([0, 2]))
        np.testing.assert_allclose(loo.theta, ref.theta, rtol=1e-14)

    def test_duplicate_row(self):
        data = Dataset([[1.0], [2.0], [2.0]], [1.0, 3.0, 3.0])
        loo = exact_loo_ridge(data, 0.5, 2)
        ref = Ridge(0.5).fit(Dataset([[1.0], [2.0]], [1.0, 3.0]))
        np.testing.assert_allclose(loo.theta, ref.theta, rtol=1e-14)

    def test_single_row_rejected(self):
        with pytest.raises(ValueError):
            exact_loo_ridge(Dataset([[1.0]], [1.0]), 1.0, 0)


class TestSymmetry:
    def test_ridge_and_mean_bitwise(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            data = random_data(rng, n=int(rng.integers(3, 40)))
            perm = rng.permutation(data.n)
            shuffled = data.subset(perm)
            for m in (Ridge(0.7), ConstantMean()):
                np.testing.assert_array_equal(m.fit(data).theta, m.fit(shuffled).theta)

    def test_mlp(self):
        rng = np.random.default_rng(2)
        m = MLP(SMALL_MLP)
        for _ in range(5):
            data = random_data(rng, n=20)
            perm = rng.permutation(data.n)
            np.testing.assert_allclose(m.fit(data).theta, m.fit(data.subset(perm)).theta,
                                       atol=1e-9)


class TestDerivatives:
    def test_mlp_gradient_finite_difference(self):
        rng = np.random.default_rng(3)
        data = random_data(rng, n=15, d=2)
        m = MLP(MlpConfig(hidden_units=3, l2_lambda=0.3))
        for _ in range(20):
            theta = rng.normal(size=m.n_params(2))
            g = m.gradient(theta, data.X, data.y)
            h = 1e-5
            fd = np.array([
                (m.objective(theta + h * e, data.X, data.y)
                 - m.objective(theta - h * e, data.X, data.y)) / (2 * h)
                for e in np.eye(theta.size)])
            assert np.all(np.abs(g - fd) / np.maximum(1.0, np.abs(g)) <= 1e-5)

    @pytest.mark.parametrize("family", ["ridge", "mlp"])
    def test_hvp_finite_difference(self, family):
        rng = np.random.default_rng(4)
        data = random_data(rng, n=15, d=2)
        m = Ridge(0.3) if family == "ridge" else MLP(MlpConfig(hidden_units=3, l2_lambda=0.3))
        for _ in range(10):
            theta = rng.normal(size=m.n_params(2))
            v = rng.normal(size=theta.size)
            omega = rng.uniform(0.5, 1.5, size=data.n)
            hv = m.hvp(theta, data.X, data.y, v, omega)
            h = 1e-5
            fd = (m.gradient(theta + h * v, data.X, data.y, omega)
                  - m.gradient(theta - h * v, data.X, data.y, omega)) / (2 * h)
            assert np.linalg.norm(hv - fd) <= 1e-4 * max(1.0, np.linalg.norm(fd))

    def test_ridge_optimality(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            data = random_data(rng)
            m = Ridge(float(rng.uniform(0.1, 5)))
            assert np.max(np.abs(m.gradient(m.fit(data), data.X, data.y))) <= 1e-8

    def test_point_gradients_sum_to_equation(self):
        rng = np.random.default_rng(6)
        data = random_data(rng, n=12, d=2)
        m = MLP(MlpConfig(hidden_units=3, l2_lambda=0.2))
        theta = rng.normal(size=m.n_params(2))
        g = m.point_gradients(theta, data.X, data.y)
        G = (m.regularizer_gradient(theta, data.n) + g.sum(0)) / data.n
        np.testing.assert_allclose(G, m.gradient(theta, data.X, data.y), atol=1e-13)

    def test_mlp_fit_is_stationary(self):
        rng = np.random.default_rng(7)
        data = random_data(rng, n=40, d=2)
        m = MLP(MlpConfig(hidden_units=5, epochs=50, learning_rate=1e-2))
        p = m.fit(data)
        assert np.max(np.abs(m.gradient(p, data.X, data.y))) <= 1e-8
