import math

import numpy as np
import pytest

from hiercal.core import GroupedDataset
from hiercal.jackknife import (LooEnsemble, fit_loo, jackknife_plus_interval,
                               jackknife_plus_intervals, jackknife_plus_second_moment_interval,
                               jackknife_plus_second_moment_intervals)
from hiercal.scores import LeastSquaresRegressor
from hiercal.eval import conditional_miscoverage_gaussian
from hiercal.simgen import (RepeatedGaussianConfig, gen_repeated_gaussian,
                            gen_repeated_gaussian_test)

from oracles import jackknife_plus_plain

INF = math.inf


def const(c):
    return LeastSquaresRegressor(np.array([float(c), 0.0]))


def ensemble(centers, residuals):
    return LooEnsemble(tuple(const(c) for c in centers),
                       tuple(np.asarray(r, dtype=float) for r in residuals))


class TestMarginal:
    def test_two_singletons(self):
        e = ensemble([10, 12], [[1], [2]])
        assert jackknife_plus_interval(e, [0.0], 0.4) == (9, 14)

    def test_degenerate_interval(self):
        e = ensemble([5, 5], [[0], [0]])
        assert jackknife_plus_interval(e, [0.0], 0.5) == (5, 5)

    def test_small_alpha_is_whole_line(self):
        e = ensemble([10, 12], [[1], [2]])
        assert jackknife_plus_interval(e, [0.0], 0.01) == (-INF, INF)

    def test_matches_plain_jackknife_plus_on_singletons(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            k = int(rng.integers(2, 25))
            mu, r = rng.normal(size=k) * 3, rng.exponential(size=k)
            alpha = float(rng.choice([0.05, 0.1, 0.2, 0.25, 0.3, 0.5, round(rng.uniform(0.01, 0.6), 3)]))
            e = ensemble(mu, r[:, None])
            assert jackknife_plus_interval(e, [0.0], alpha) == jackknife_plus_plain(mu, r, alpha)

    def test_lower_never_exceeds_upper(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = int(rng.integers(2, 10))
            e = ensemble(rng.normal(size=k), [rng.exponential(size=rng.integers(1, 4)) for _ in range(k)])
            lo, hi = jackknife_plus_intervals(e, rng.normal(size=(5, 1)), rng.uniform(0.01, 0.49))
            assert (lo <= hi).all()


class TestSecondMoment:
    def test_pairs(self):
        e = ensemble([10, 12], [[1, 3], [2, 4]])
        assert jackknife_plus_second_moment_interval(e, [0.0], 0.8) == (9, 14)

    def test_all_singletons_warn(self):
        e = ensemble([10, 12], [[1], [2]])
        with pytest.warns(RuntimeWarning):
            assert jackknife_plus_second_moment_interval(e, [0.0], 0.5) == (-INF, INF)

    def test_small_alpha_is_whole_line(self):
        e = ensemble([10, 12], [[1, 3], [2, 4]])
        assert jackknife_plus_second_moment_interval(e, [0.0], 0.05) == (-INF, INF)

    def test_vectorised_matches_scalar(self):
        rng = np.random.default_rng(2)
        e = ensemble(rng.normal(size=6), [rng.exponential(size=rng.integers(1, 5)) for _ in range(6)])
        X = rng.normal(size=(4, 1))
        lo, hi = jackknife_plus_second_moment_intervals(e, X, 0.7)
        for i in range(4):
            assert jackknife_plus_second_moment_interval(e, X[i], 0.7) == (lo[i], hi[i])


class TestFitLoo:
    def test_identical_groups_symmetric(self):
        ds = GroupedDataset.from_arrays([[[0.0], [1.0]], [[0.0], [1.0]]], [[1.0, 2.0], [1.0, 2.0]])
        e = fit_loo(ds, "least_squares")
        np.testing.assert_allclose(e.models[0].coef, e.models[1].coef)

    def test_constant_response(self):
        ds = GroupedDataset.from_arrays([[[0.0], [1.0]], [[2.0]], [[3.0], [4.0]]], [[5, 5], [5], [5, 5]])
        e = fit_loo(ds, "kernel", {"h": 0.5})
        assert all((r == 0).all() for r in e.residuals)

    def test_exact_line(self):
        xs = [[[0.0], [1.0]], [[2.0], [3.0]], [[4.0]]]
        ys = [[1.0, 3.0], [5.0, 7.0], [9.0]]
        e = fit_loo(GroupedDataset.from_arrays(xs, ys), "least_squares")
        assert max(r.max() for r in e.residuals) < 1e-9

    def test_needs_two_groups(self):
        with pytest.raises(ValueError):
            fit_loo(GroupedDataset.from_arrays([[[0.0]]], [[1.0]]))


def test_second_moment_bound_on_repeated_measurements():
    alpha, trials = 0.2, 40
    ad_sq = []
    for t in range(trials):
        data = gen_repeated_gaussian(RepeatedGaussianConfig(60, 2, 1, seed=100 + t))
        X, _, mu, sigma = gen_repeated_gaussian_test(400, 1, seed=900 + t)
        e = fit_loo(data, "least_squares")
        lo, hi = jackknife_plus_second_moment_intervals(e, X, alpha)
        ad_sq.append(np.mean(conditional_miscoverage_gaussian(lo, hi, mu, sigma) ** 2))
    ad_sq = np.array(ad_sq)
    se = ad_sq.std(ddof=1) / math.sqrt(trials)
    assert ad_sq.mean() <= 4 * alpha ** 2 + 3 * se
