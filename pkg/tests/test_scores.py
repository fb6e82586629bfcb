import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiercal.core import GroupedDataset
from hiercal.scores import (FittedScore, LeastSquaresRegressor, fit_kernel_regression,
                            fit_kernel_scale, fit_knn, fit_knn_scale, fit_least_squares,
                            fit_score, invert_threshold, score)


def singletons(xs, ys):
    return GroupedDataset.from_arrays([[[float(x)]] for x in xs], [[float(y)] for y in ys])


def constant_model(c, dim=1):
    return LeastSquaresRegressor(np.r_[float(c), np.zeros(dim)])


class TestLeastSquares:
    def test_exact_line(self):
        m = fit_least_squares(singletons([0, 1, 2], [1, 2, 3]))
        np.testing.assert_allclose(m.coef, [1.0, 1.0], atol=1e-12)

    def test_constant_response(self):
        m = fit_least_squares(singletons([0, 1, 5, 7], [7, 7, 7, 7]))
        np.testing.assert_allclose(m.coef, [7.0, 0.0], atol=1e-12)

    def test_noisy_slope_matches_normal_equations(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 5, 200)
        y = 1 + x + rng.normal(0, 0.01, 200)
        m = fit_least_squares(singletons(x, y))
        A = np.column_stack([np.ones_like(x), x])
        oracle = np.linalg.solve(A.T @ A, A.T @ y)
        np.testing.assert_allclose(m.coef, oracle, atol=1e-9)
        assert abs(m.coef[1] - 1) < 0.05

    def test_singular_design(self):
        with pytest.raises(ValueError, match="singular design"):
            fit_least_squares(singletons([2, 2, 2], [1, 2, 3]))

    def test_groups_are_pooled(self):
        grouped = GroupedDataset.from_arrays([[[0.0], [1.0]], [[2.0]]], [[1.0, 2.5], [2.0]])
        flat = singletons([0, 1, 2], [1, 2.5, 2])
        np.testing.assert_allclose(fit_least_squares(grouped).coef, fit_least_squares(flat).coef)


class TestKernel:
    def test_window_mean(self):
        m = fit_kernel_regression(singletons([0, 0.3], [1, 3]), 0.5)
        assert m.predict([[0.1]])[0] == 2

    def test_single_point(self):
        assert fit_kernel_regression(singletons([0], [1]), 0.2).predict([[0.0]])[0] == 1

    def test_empty_window_falls_back_to_nearest(self):
        m = fit_kernel_regression(singletons([0, 5], [1, 9]), 0.5)
        assert m.predict([[2.0]])[0] == 1

    def test_window_is_open(self):
        # |x_i - x| < h is strict, so a point exactly h away is excluded
        m = fit_kernel_regression(singletons([0, 0.5], [1, 3]), 0.5)
        assert m.predict([[0.0]])[0] == 1

    def test_huge_bandwidth_is_global_mean(self):
        rng = np.random.default_rng(1)
        x, y = rng.uniform(0, 5, 50), rng.normal(size=50)
        m = fit_kernel_regression(singletons(x, y), 1e6)
        np.testing.assert_allclose(m.predict(np.array([[0.0], [2.5], [5.0]])), y.mean(), atol=1e-12)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            fit_kernel_regression(singletons([0], [1]), 0.0)
        with pytest.raises(ValueError):
            fit_kernel_regression(GroupedDataset(()), 0.5)

    def test_scale_constant_response_clamps(self):
        train = singletons([0, 0.1, 0.2], [4, 4, 4])
        mean = fit_kernel_regression(train, 0.5)
        s = fit_kernel_scale(train, mean, 0.5, 1e-6)
        assert s.predict([[0.1]])[0] == 1e-6

    def test_scale_root_mean_square(self):
        train = singletons([0, 0.1], [-1, 1])
        mean = fit_kernel_regression(train, 0.5)
        s = fit_kernel_scale(train, mean, 0.5)
        assert s.predict([[0.05]])[0] == pytest.approx(1.0, abs=1e-12)

    def test_scale_single_point_window(self):
        # the lone window point is also what the mean model predicts, so the residual is 0
        train = singletons([0, 3], [2, 10])
        mean = fit_kernel_regression(train, 0.5)
        assert fit_kernel_scale(train, mean, 0.5).predict([[0.2]])[0] == 1e-6


class TestKnn:
    def test_average_of_nearest(self):
        m = fit_knn(singletons([0, 1, 2, 10], [0, 1, 2, 100]), 3)
        assert m.predict([[1.0]])[0] == pytest.approx(1.0)

    def test_k_larger_than_data(self):
        m = fit_knn(singletons([0, 1], [2, 4]), 20)
        assert m.predict([[0.0]])[0] == 3.0

    def test_scale(self):
        mean = fit_knn(singletons([0, 1, 2, 3], [0, 2, 0, 2]), 4)
        s = fit_knn_scale(mean)
        assert s.predict([[1.5]])[0] == pytest.approx(1.0)


class TestScoreAndInversion:
    def test_residual_scores(self):
        sfn = FittedScore("residual", constant_model(3.0))
        assert score(sfn, [0.0], 3.0) == 0
        assert score(sfn, [0.0], 5.0) == 2

    def test_rescaled_score(self):
        sfn = FittedScore("rescaled", constant_model(0.0), constant_model(2.0))
        assert score(sfn, [1.0], 5.0) == 2.5
        assert invert_threshold(sfn, [1.0], 1.5) == (-3.0, 3.0)

    def test_residual_inversion(self):
        sfn = FittedScore("residual", constant_model(10.0))
        assert invert_threshold(sfn, [0.0], 2.0) == (8.0, 12.0)
        assert invert_threshold(sfn, [0.0], math.inf) == (-math.inf, math.inf)

    def test_negative_threshold(self):
        sfn = FittedScore("residual", constant_model(10.0))
        with pytest.raises(ValueError, match="invalid threshold"):
            invert_threshold(sfn, [0.0], -1.0)

    def test_rescaled_requires_scale_model(self):
        with pytest.raises(ValueError):
            FittedScore("rescaled", constant_model(0.0))
        with pytest.raises(ValueError):
            fit_score(singletons([0, 1, 2], [0, 1, 2]), "least_squares", "rescaled")

    def test_dimension_mismatch(self):
        sfn = FittedScore("residual", constant_model(0.0, dim=2))
        with pytest.raises(ValueError, match="dimension mismatch"):
            score(sfn, [1.0], 0.0)

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(5)
        train = singletons(rng.uniform(0, 5, 40), rng.normal(size=40))
        X = np.linspace(-1, 6, 17).reshape(-1, 1)
        for regressor, kind in [("least_squares", "residual"), ("kernel", "rescaled"),
                                ("knn", "rescaled")]:
            sfn = fit_score(train, regressor, kind, k=5)
            back = FittedScore.from_dict(sfn.to_dict())
            np.testing.assert_array_equal(back.intervals(X, 1.3)[0], sfn.intervals(X, 1.3)[0])
            np.testing.assert_array_equal(back.intervals(X, 1.3)[1], sfn.intervals(X, 1.3)[1])


_rng = np.random.default_rng(11)
_train = singletons(_rng.uniform(0, 5, 60), _rng.normal(size=60) * 2)
_FITTED = [fit_score(_train, "kernel", "rescaled", h=0.5), fit_score(_train, "least_squares")]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(_FITTED), st.floats(0, 5), st.floats(0, 10), st.floats(-30, 30))
def test_inversion_round_trip(sfn, x, t, y):
    lo, hi = invert_threshold(sfn, [x], t)
    s = score(sfn, [x], y)
    if lo <= y <= hi:
        assert s <= t + 1e-12 * max(1.0, t)
    else:
        assert s > t - 1e-12 * max(1.0, t)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_residual_zero_iff_exact(mu, y):
    sfn = FittedScore("residual", constant_model(mu))
    assert (score(sfn, [0.0], y) == 0) == (y == mu)
