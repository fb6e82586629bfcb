"""Hierarchical jackknife+ with leave-one-group-out refits.

For each group ``k`` a mean model is refit without that group; its held-out
residuals ``R_{k,i}`` and its prediction at the test point are combined
through the lower/upper weighted quantiles of ``core``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (GroupedDataset, lower_quantile_rows, upper_quantile_rows)
from .scores import Regressor, fit_kernel_regression, fit_knn, fit_least_squares

_FITTERS = {
    "least_squares": lambda train, params: fit_least_squares(train),
    "kernel": lambda train, params: fit_kernel_regression(train, params.get("h", 0.5)),
    "knn": lambda train, params: fit_knn(train, params.get("k", 20)),
}


@dataclass(frozen=True, eq=False)
class LooEnsemble:
    """Leave-one-group-out models and held-out residuals, ordered by group."""

    models: tuple[Regressor, ...]
    residuals: tuple[np.ndarray, ...]

    def __len__(self):
        return len(self.models)

    def loo_predictions(self, X) -> np.ndarray:
        """Shape ``(n_queries, K)``: ``mu_{-k}(x)`` for every query and group."""
        return np.column_stack([m.predict(X) for m in self.models])


def fit_loo(train: GroupedDataset, regressor_kind: str = "least_squares",
            params: dict | None = None) -> LooEnsemble:
    """Fit ``K`` models, each on all groups but one.

    Every fit sees pooled points only, so the procedure is symmetric in the
    groups and in the members within each group.
    """
    if len(train) < 2:
        raise ValueError("jackknife+ needs at least two groups")
    if regressor_kind not in _FITTERS:
        raise ValueError(f"unknown regressor {regressor_kind!r}")
    params = params or {}
    fit = _FITTERS[regressor_kind]
    models, residuals = [], []
    for k, g in enumerate(train.groups):
        rest = GroupedDataset(train.groups[:k] + train.groups[k + 1:])
        model = fit(rest, params)
        models.append(model)
        residuals.append(np.abs(g.y - model.predict(g.x)))
    return LooEnsemble(tuple(models), tuple(residuals))


def _marginal_atoms(e: LooEnsemble, mu: np.ndarray):
    k = len(e)
    sizes = [r.size for r in e.residuals]
    col = np.repeat(np.arange(k), sizes)
    r = np.concatenate(e.residuals)
    w = np.concatenate([np.full(n, 1.0 / ((k + 1) * n)) for n in sizes])
    return mu[:, col], r, w, 1.0 / (k + 1)


def _pair_atoms(e: LooEnsemble, mu: np.ndarray):
    keep = [k for k, r in enumerate(e.residuals) if r.size >= 2]
    k2 = len(keep)
    cols, mins, weights = [], [], []
    for k in keep:
        r = e.residuals[k]
        i, j = np.triu_indices(r.size, 1)
        m = np.minimum(r[i], r[j])
        cols.append(np.full(m.size, k))
        mins.append(m)
        weights.append(np.full(m.size, 1.0 / ((k2 + 1) * math.comb(r.size, 2))))
    col = np.concatenate(cols)
    return mu[:, col], np.concatenate(mins), np.concatenate(weights), 1.0 / (k2 + 1)


def _interval(center, r, w, inf_w, lo_level, hi_level):
    n = center.shape[0]
    lo_vals = np.column_stack([center - r[None, :], np.full(n, -math.inf)])
    hi_vals = np.column_stack([center + r[None, :], np.full(n, math.inf)])
    weights = np.append(w, inf_w)
    return (lower_quantile_rows(lo_vals, weights, lo_level),
            upper_quantile_rows(hi_vals, weights, hi_level))


def jackknife_plus_intervals(e: LooEnsemble, X, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised hierarchical jackknife+ over the rows of ``X``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    center, r, w, inf_w = _marginal_atoms(e, e.loo_predictions(X))
    return _interval(center, r, w, inf_w, alpha, 1.0 - alpha)


def jackknife_plus_second_moment_intervals(e: LooEnsemble, X, alpha: float):
    """Pairwise-minimum variant at levels ``alpha**2`` and ``1 - alpha**2``.

    Groups with one member are dropped; if none remain the interval is the
    whole line.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    mu = e.loo_predictions(X)
    if not any(r.size >= 2 for r in e.residuals):
        warnings.warn("no group has two or more members; interval is (-inf, +inf)",
                      RuntimeWarning, stacklevel=2)
        n = mu.shape[0]
        return np.full(n, -math.inf), np.full(n, math.inf)
    center, r, w, inf_w = _pair_atoms(e, mu)
    return _interval(center, r, w, inf_w, alpha ** 2, 1.0 - alpha ** 2)


def jackknife_plus_interval(e: LooEnsemble, x, alpha: float) -> tuple[float, float]:
    lo, hi = jackknife_plus_intervals(e, np.atleast_2d(np.asarray(x, dtype=float)), alpha)
    return float(lo[0]), float(hi[0])


def jackknife_plus_second_moment_interval(e: LooEnsemble, x, alpha: float) -> tuple[float, float]:
    lo, hi = jackknife_plus_second_moment_intervals(
        e, np.atleast_2d(np.asarray(x, dtype=float)), alpha)
    return float(lo[0]), float(hi[0])
