"""Regressors fit on the training groups and the two nonconformity scores.

Scores
------
``residual``  ``|y - mu(x)|``, inverted to ``mu(x) +/- T``
``rescaled``  ``|y - mu(x)| / max(sigma(x), floor)``, inverted to
              ``mu(x) +/- T * sigma(x)``

All regressors ignore group labels when fitting (they see the pooled points),
which keeps every fitting procedure symmetric in the groups and in the
members of each group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import GroupedDataset

DEFAULT_SCALE_FLOOR = 1e-6
DEFAULT_BANDWIDTH = 0.5
DEFAULT_NEIGHBORS = 20

_CHUNK = 2048


def _as_queries(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1) if dim > 1 or X.size == 1 else X.reshape(-1, 1)
    if X.shape[1] != dim:
        raise ValueError(f"dimension mismatch: model expects d={dim}, got {X.shape[1]}")
    return X


class Regressor:
    """Base class; subclasses implement ``predict`` and ``to_dict``."""

    kind: str = ""
    dim: int = 1

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __call__(self, X):
        return self.predict(X)


@dataclass(frozen=True, eq=False)
class LeastSquaresRegressor(Regressor):
    """Linear model ``coef[0] + x @ coef[1:]``."""

    coef: np.ndarray
    kind = "least_squares_linear"

    @property
    def dim(self) -> int:
        return self.coef.size - 1

    def predict(self, X) -> np.ndarray:
        X = _as_queries(X, self.dim)
        return self.coef[0] + X @ self.coef[1:]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "coef": [float(c) for c in self.coef]}


@dataclass(frozen=True, eq=False)
class KernelRegressor(Regressor):
    """Box-kernel (Nadaraya-Watson) regression in one dimension.

    Averages the responses with ``|x_i - x| < h``; an empty window falls
    back to the single nearest training point.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    h: float
    kind = "kernel_box"
    dim = 1

    def _windows(self, q: np.ndarray):
        for start in range(0, q.size, _CHUNK):
            block = q[start:start + _CHUNK]
            dist = np.abs(block[:, None] - self.x_train[None, :])
            yield start, block, dist, dist < self.h

    def predict(self, X) -> np.ndarray:
        q = _as_queries(X, 1)[:, 0]
        out = np.empty(q.size)
        for start, _, dist, win in self._windows(q):
            n = win.sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = (win * self.y_train[None, :]).sum(axis=1) / n
            empty = n == 0
            if empty.any():
                mean[empty] = self.y_train[np.argmin(dist[empty], axis=1)]
            out[start:start + mean.size] = mean
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "h": float(self.h),
                "x": self.x_train.tolist(), "y": self.y_train.tolist()}


@dataclass(frozen=True, eq=False)
class KernelScale(Regressor):
    """Windowed root-mean-square residual around the mean model's prediction.

    ``sigma(x) = sqrt(mean_{|x_i - x| < h} (y_i - mu(x))^2)``, clamped below
    at ``floor``.
    """

    mean_model: KernelRegressor
    h: float
    floor: float = DEFAULT_SCALE_FLOOR
    kind = "kernel_box_scale"
    dim = 1

    def predict(self, X) -> np.ndarray:
        q = _as_queries(X, 1)[:, 0]
        mu = self.mean_model.predict(q.reshape(-1, 1))
        xt, yt = self.mean_model.x_train, self.mean_model.y_train
        out = np.empty(q.size)
        for start in range(0, q.size, _CHUNK):
            block = q[start:start + _CHUNK]
            m = mu[start:start + _CHUNK]
            dist = np.abs(block[:, None] - xt[None, :])
            win = dist < self.h
            n = win.sum(axis=1)
            empty = n == 0
            if empty.any():
                nearest = np.argmin(dist[empty], axis=1)
                win[empty] = False
                win[np.flatnonzero(empty), nearest] = True
                n = win.sum(axis=1)
            sq = np.where(win, (yt[None, :] - m[:, None]) ** 2, 0.0)
            out[start:start + block.size] = np.sqrt(sq.sum(axis=1) / n)
        return np.maximum(out, self.floor)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "h": float(self.h), "floor": float(self.floor)}


@dataclass(frozen=True, eq=False)
class KNNRegressor(Regressor):
    """Mean response of the ``k`` nearest training points (Euclidean)."""

    x_train: np.ndarray
    y_train: np.ndarray
    k: int

    kind = "knn"

    def __post_init__(self):
        object.__setattr__(self, "_tree", cKDTree(self.x_train))

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]

    @property
    def k_eff(self) -> int:
        return min(self.k, self.y_train.size)

    def neighbors(self, X) -> np.ndarray:
        X = _as_queries(X, self.dim)
        _, idx = self._tree.query(X, k=self.k_eff)
        return np.asarray(idx).reshape(X.shape[0], self.k_eff)

    def predict(self, X) -> np.ndarray:
        return self.y_train[self.neighbors(X)].mean(axis=1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": int(self.k),
                "x": self.x_train.tolist(), "y": self.y_train.tolist()}


@dataclass(frozen=True, eq=False)
class KNNScale(Regressor):
    """Root-mean-square residual over the ``k`` nearest neighbours."""

    mean_model: KNNRegressor
    floor: float = DEFAULT_SCALE_FLOOR
    kind = "knn_scale"

    @property
    def dim(self) -> int:
        return self.mean_model.dim

    def predict(self, X) -> np.ndarray:
        idx = self.mean_model.neighbors(X)
        ynb = self.mean_model.y_train[idx]
        mu = ynb.mean(axis=1)
        sigma = np.sqrt(((ynb - mu[:, None]) ** 2).mean(axis=1))
        return np.maximum(sigma, self.floor)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "floor": float(self.floor)}


def fit_least_squares(train: GroupedDataset) -> LeastSquaresRegressor:
    """Ordinary least squares with intercept on the pooled points."""
    X, y = train.pooled()
    design = np.column_stack([np.ones(X.shape[0]), X])
    if design.shape[0] < design.shape[1] or np.linalg.matrix_rank(design) < design.shape[1]:
        raise ValueError("singular design")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return LeastSquaresRegressor(coef)


def fit_kernel_regression(train: GroupedDataset, h: float = DEFAULT_BANDWIDTH) -> KernelRegressor:
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    if len(train) == 0:
        raise ValueError("empty training set")
    X, y = train.pooled()
    if X.shape[1] != 1:
        raise ValueError("kernel regression supports d = 1 only")
    return KernelRegressor(X[:, 0].copy(), y.copy(), float(h))


def fit_kernel_scale(train: GroupedDataset, mean_model: KernelRegressor,
                     h: float = DEFAULT_BANDWIDTH,
                     floor: float = DEFAULT_SCALE_FLOOR) -> KernelScale:
    """Scale model over the same training points as ``mean_model``.

    ``train`` must be the set ``mean_model`` was fit on; it is checked, not
    re-read.
    """
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    if len(train) == 0:
        raise ValueError("empty training set")
    X, y = train.pooled()
    if X.shape[0] != mean_model.x_train.size:
        raise ValueError("scale model must share the mean model's training set")
    return KernelScale(mean_model, float(h), float(floor))


def fit_knn(train: GroupedDataset, k: int = DEFAULT_NEIGHBORS) -> KNNRegressor:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(train) == 0:
        raise ValueError("empty training set")
    X, y = train.pooled()
    return KNNRegressor(X.copy(), y.copy(), int(k))


def fit_knn_scale(mean_model: KNNRegressor, floor: float = DEFAULT_SCALE_FLOOR) -> KNNScale:
    return KNNScale(mean_model, float(floor))


def regressor_from_dict(d: dict, mean_model: Optional[Regressor] = None) -> Regressor:
    kind = d["kind"]
    if kind == LeastSquaresRegressor.kind:
        return LeastSquaresRegressor(np.array(d["coef"], dtype=float))
    if kind == KernelRegressor.kind:
        return KernelRegressor(np.array(d["x"], dtype=float), np.array(d["y"], dtype=float),
                               float(d["h"]))
    if kind == KNNRegressor.kind:
        return KNNRegressor(np.array(d["x"], dtype=float).reshape(len(d["y"]), -1),
                            np.array(d["y"], dtype=float), int(d["k"]))
    if kind == KernelScale.kind:
        if not isinstance(mean_model, KernelRegressor):
            raise ValueError("kernel scale model needs a kernel mean model")
        return KernelScale(mean_model, float(d["h"]), float(d["floor"]))
    if kind == KNNScale.kind:
        if not isinstance(mean_model, KNNRegressor):
            raise ValueError("knn scale model needs a knn mean model")
        return KNNScale(mean_model, float(d["floor"]))
    raise ValueError(f"unknown regressor kind {kind!r}")


@dataclass(frozen=True, eq=False)
class FittedScore:
    """A trained nonconformity score and its threshold inversion."""

    kind: str
    mean_model: Regressor
    scale_model: Optional[Regressor] = None
    scale_floor: float = DEFAULT_SCALE_FLOOR

    def __post_init__(self):
        if self.kind not in ("residual", "rescaled"):
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.kind == "rescaled" and self.scale_model is None:
            raise ValueError("rescaled score requires a scale model")
        if not self.scale_floor > 0:
            raise ValueError("scale_floor must be positive")

    @property
    def dim(self) -> int:
        return self.mean_model.dim

    def scale(self, X) -> np.ndarray:
        X = _as_queries(X, self.dim)
        if self.kind == "residual":
            return np.ones(X.shape[0])
        return np.maximum(self.scale_model.predict(X), self.scale_floor)

    def scores(self, X, y) -> np.ndarray:
        X = _as_queries(X, self.dim)
        resid = np.abs(np.asarray(y, dtype=float).ravel() - self.mean_model.predict(X))
        if self.kind == "residual":
            return resid
        return resid / self.scale(X)

    def intervals(self, X, threshold: float) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper endpoints of ``{y : s(x, y) <= threshold}``."""
        X = _as_queries(X, self.dim)
        if threshold < 0:
            raise ValueError("invalid threshold")
        mu = self.mean_model.predict(X)
        if math.isinf(threshold):
            return np.full(mu.size, -math.inf), np.full(mu.size, math.inf)
        half = threshold * self.scale(X)
        return mu - half, mu + half

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "scale_floor": float(self.scale_floor),
            "mean_model": self.mean_model.to_dict(),
            "scale_model": None if self.scale_model is None else self.scale_model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedScore":
        mean = regressor_from_dict(d["mean_model"])
        scale = None
        if d.get("scale_model") is not None:
            scale = regressor_from_dict(d["scale_model"], mean_model=mean)
        return cls(d["kind"], mean, scale, float(d["scale_floor"]))


def score(sfn: FittedScore, x, y: float) -> float:
    """Score of a single point."""
    return float(sfn.scores(np.atleast_2d(np.asarray(x, dtype=float)), [y])[0])


def invert_threshold(sfn: FittedScore, x, threshold: float) -> tuple[float, float]:
    """Prediction interval at a single feature vector."""
    lo, hi = sfn.intervals(np.atleast_2d(np.asarray(x, dtype=float)), threshold)
    return float(lo[0]), float(hi[0])


def fit_score(train: GroupedDataset, regressor: str = "least_squares", kind: str = "residual",
              h: float = DEFAULT_BANDWIDTH, k: int = DEFAULT_NEIGHBORS,
              scale_floor: float = DEFAULT_SCALE_FLOOR) -> FittedScore:
    """Fit the mean (and, for ``rescaled``, the scale) model on ``train``.

    ``regressor`` is one of ``least_squares``, ``kernel`` or ``knn``.  The
    least-squares model has no scale counterpart, so ``rescaled`` requires a
    nonparametric regressor.
    """
    if regressor == "least_squares":
        if kind == "rescaled":
            raise ValueError("rescaled score needs a scale model; least squares has none")
        return FittedScore(kind, fit_least_squares(train), None, scale_floor)
    if regressor == "kernel":
        mean = fit_kernel_regression(train, h)
        scale = fit_kernel_scale(train, mean, h, scale_floor) if kind == "rescaled" else None
        return FittedScore(kind, mean, scale, scale_floor)
    if regressor == "knn":
        mean = fit_knn(train, k)
        scale = fit_knn_scale(mean, scale_floor) if kind == "rescaled" else None
        return FittedScore(kind, mean, scale, scale_floor)
    raise ValueError(f"unknown regressor {regressor!r}")
