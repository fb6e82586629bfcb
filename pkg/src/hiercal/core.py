"""Weighted point-mass distributions on the extended real line.

Every threshold in the package is a quantile of a finite mixture of point
masses, some of which may sit at ``-inf`` or ``+inf``.  Extended reals are
plain Python floats; ``math.inf`` plays the role of the infinite atoms.

Two quantile operators are provided:

``upper_quantile(dist, level)``
    ``inf{t : P(T <= t) >= level}``
``lower_quantile(dist, level)``
    ``sup{t : P(T <= t) <= level}``

Cumulative weights are compared against the level with a tolerance of
``LEVEL_TOL`` so that weights such as ``1/10`` summed nine times still reach
``0.9``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "LEVEL_TOL",
    "WEIGHT_TOL",
    "WeightedDistribution",
    "Group",
    "GroupedDataset",
    "upper_quantile",
    "lower_quantile",
    "upper_quantile_rows",
    "lower_quantile_rows",
]

#: Allowed deviation of the total weight from one.
WEIGHT_TOL = 1e-9
#: Slack used when comparing a cumulative weight with a quantile level.
LEVEL_TOL = 1e-12


@dataclass(frozen=True)
class WeightedDistribution:
    """Finite list of ``(value, weight)`` atoms.

    Values may be ``-inf``/``+inf``; duplicate values are allowed and their
    weights accumulate when the CDF is evaluated.

    Parameters
    ----------
    values : array-like of float
    weights : array-like of float, nonnegative
    """

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        weights = np.array(self.weights, dtype=float).ravel()
        if values.shape != weights.shape:
            raise ValueError("values and weights must have the same length")
        if np.isnan(values).any() or np.isnan(weights).any():
            raise ValueError("atoms must not contain NaN")
        if (weights < 0).any():
            raise ValueError("weights must be nonnegative")
        values.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "WeightedDistribution":
        atoms = list(atoms)
        if not atoms:
            return cls(np.empty(0), np.empty(0))
        values, weights = zip(*atoms)
        return cls(np.array(values, dtype=float), np.array(weights, dtype=float))

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights)

    def negated(self) -> "WeightedDistribution":
        """Reflect every atom through zero (``+inf`` maps to ``-inf``)."""
        return WeightedDistribution(-self.values, self.weights)

    def cdf(self, t: float) -> float:
        return math.fsum(self.weights[self.values <= t])

    def __len__(self):
        return self.values.size


def _check(dist: WeightedDistribution, level: float) -> None:
    if len(dist) == 0:
        raise ValueError("empty distribution")
    if abs(dist.total_weight - 1.0) > WEIGHT_TOL:
        raise ValueError(f"unnormalized distribution (total weight {dist.total_weight!r})")
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must lie in [0, 1], got {level!r}")


def upper_quantile(dist: WeightedDistribution, level: float) -> float:
    """Smallest atom ``t`` with ``P(T <= t) >= level``.

    Returns the smallest atom when ``level == 0`` and ``+inf`` when only a
    ``+inf`` atom reaches the level.
    """
    _check(dist, level)
    order = np.argsort(dist.values, kind="stable")
    v = dist.values[order]
    cum = np.cumsum(dist.weights[order])
    reach = cum >= level - LEVEL_TOL
    # rounding can leave the last partial sum a hair short of 1
    reach[-1] = True
    return float(v[int(np.argmax(reach))])


def lower_quantile(dist: WeightedDistribution, level: float) -> float:
    """Supremum of ``{t : P(T <= t) <= level}``.

    This is the first atom whose cumulative weight exceeds ``level``;
    ``-inf`` if a ``-inf`` atom alone already exceeds it and ``+inf`` if no
    atom does.
    """
    _check(dist, level)
    order = np.argsort(dist.values, kind="stable")
    v = dist.values[order]
    cum = np.cumsum(dist.weights[order])
    exceeds = cum > level + LEVEL_TOL
    if not exceeds.any():
        return math.inf
    return float(v[int(np.argmax(exceeds))])


def upper_quantile_rows(values: np.ndarray, weights: np.ndarray, level: float) -> np.ndarray:
    """Row-wise :func:`upper_quantile` for a batch of distributions.

    ``values`` has shape ``(n, m)``; ``weights`` is either shape ``(m,)``
    (shared) or ``(n, m)``.  No normalization check is performed.
    """
    values = np.asarray(values, dtype=float)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), values.shape)
    order = np.argsort(values, axis=1, kind="stable")
    v = np.take_along_axis(values, order, axis=1)
    cum = np.cumsum(np.take_along_axis(weights, order, axis=1), axis=1)
    reach = cum >= level - LEVEL_TOL
    reach[:, -1] = True
    idx = np.argmax(reach, axis=1)
    return v[np.arange(v.shape[0]), idx]


def lower_quantile_rows(values: np.ndarray, weights: np.ndarray, level: float) -> np.ndarray:
    """Row-wise :func:`lower_quantile`; see :func:`upper_quantile_rows`."""
    values = np.asarray(values, dtype=float)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), values.shape)
    order = np.argsort(values, axis=1, kind="stable")
    v = np.take_along_axis(values, order, axis=1)
    cum = np.cumsum(np.take_along_axis(weights, order, axis=1), axis=1)
    exceeds = cum > level + LEVEL_TOL
    out = v[np.arange(v.shape[0]), np.argmax(exceeds, axis=1)]
    out[~exceeds.any(axis=1)] = math.inf
    return out


@dataclass(frozen=True)
class Group:
    """One group of observations sharing a group id.

    ``x`` has shape ``(n_members, d)`` and ``y`` shape ``(n_members,)``.
    """

    group_id: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float).ravel()
        if y.size < 1:
            raise ValueError(f"group {self.group_id} has no members")
        if x.ndim == 1:
            x = x.reshape(y.size, -1)
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ValueError("x must have one row per member")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class GroupedDataset:
    """Ordered collection of :class:`Group` objects with a common dimension."""

    groups: tuple[Group, ...] = field(default_factory=tuple)

    def __post_init__(self):
        groups = tuple(self.groups)
        ids = [g.group_id for g in groups]
        if len(set(ids)) != len(ids):
            raise ValueError("group ids must be unique")
        if groups and len({g.dim for g in groups}) != 1:
            raise ValueError("all x vectors must share one dimension")
        object.__setattr__(self, "groups", groups)

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return GroupedDataset(self.groups[item])
        return self.groups[item]

    @property
    def dim(self) -> int:
        if not self.groups:
            raise ValueError("empty dataset has no dimension")
        return self.groups[0].dim

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups], dtype=int)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """All points stacked, ignoring group labels."""
        if not self.groups:
            raise ValueError("empty dataset")
        return (np.concatenate([g.x for g in self.groups]),
                np.concatenate([g.y for g in self.groups]))

    def split(self, n_first: int) -> tuple["GroupedDataset", "GroupedDataset"]:
        return self[:n_first], self[n_first:]

    @classmethod
    def from_arrays(cls, xs: Sequence, ys: Sequence, ids: Sequence[int] | None = None):
        if ids is None:
            ids = range(len(ys))
        return cls(tuple(Group(int(i), x, y) for i, x, y in zip(ids, xs, ys)))
