"""Split-based threshold rules for grouped calibration data.

Every rule maps the calibration scores (one array per group) and a level
``alpha`` to a threshold ``T``; the prediction set at ``x`` is then
``{y : s(x, y) <= T}``.  Rules that need randomness (subsampling) take the
sampled indices as arguments so that they stay deterministic.

Indices passed to the subsampling rules are zero-based.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import GroupedDataset, WeightedDistribution, upper_quantile
from .scores import FittedScore

METHODS = (
    "split",
    "hcp",
    "hcp2",
    "pooling_cdfs",
    "double_conformal",
    "subsampling_once",
    "repeated_subsampling",
)
DEFAULT_B = 50
FORMAT_NAME = "hiercal.predictor"
FORMAT_VERSION = 1


def _as_groups(group_scores) -> list[np.ndarray]:
    groups = [np.asarray(g, dtype=float).ravel() for g in group_scores]
    if not groups:
        raise ValueError("calibration set is empty")
    if any(g.size == 0 for g in groups):
        raise ValueError("every calibration group needs at least one member")
    return groups


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def _with_inf_atom(values, weights, inf_weight: float) -> WeightedDistribution:
    return WeightedDistribution(np.append(values, math.inf), np.append(weights, inf_weight))


def split_conformal_threshold(group_scores, alpha: float) -> float:
    """Classical split conformal on singleton groups."""
    groups = _as_groups(group_scores)
    _check_alpha(alpha)
    if any(g.size != 1 for g in groups):
        raise ValueError("split conformal needs singleton groups; use hcp for grouped data")
    s = np.concatenate(groups)
    w = 1.0 / (s.size + 1)
    return upper_quantile(_with_inf_atom(s, np.full(s.size, w), w), 1.0 - alpha)


def hcp_distribution(group_scores) -> WeightedDistribution:
    """Atoms ``s_{k,i}`` with weight ``1/((K1+1) N_k)`` plus ``+inf`` at ``1/(K1+1)``."""
    groups = _as_groups(group_scores)
    k1 = len(groups)
    values = np.concatenate(groups)
    weights = np.concatenate([np.full(g.size, 1.0 / ((k1 + 1) * g.size)) for g in groups])
    return _with_inf_atom(values, weights, 1.0 / (k1 + 1))


def hcp_threshold(group_scores, alpha: float) -> float:
    """Hierarchical conformal threshold at level ``1 - alpha``."""
    _check_alpha(alpha)
    return upper_quantile(hcp_distribution(group_scores), 1.0 - alpha)


def hcp2_distribution(group_scores) -> Optional[WeightedDistribution]:
    """Order-statistic atoms for the second-moment rule.

    Within a group of size ``N >= 2`` the ``i``-th smallest score (1-based)
    gets weight ``(N - i) / ((K1' + 1) * C(N, 2))`` where ``K1'`` counts the
    groups with two or more members.  This equals putting weight
    ``1/((K1' + 1) C(N, 2))`` on every within-group pairwise minimum.
    Returns ``None`` when no group has two members.
    """
    groups = [g for g in _as_groups(group_scores) if g.size >= 2]
    if not groups:
        return None
    k2 = len(groups)
    values, weights = [], []
    for g in groups:
        n = g.size
        i = np.arange(1, n + 1)
        values.append(np.sort(g))
        weights.append((n - i) / ((k2 + 1) * math.comb(n, 2)))
    return _with_inf_atom(np.concatenate(values), np.concatenate(weights), 1.0 / (k2 + 1))


def hcp2_threshold(group_scores, alpha: float) -> float:
    """Second-moment threshold at level ``1 - alpha**2``.

    Groups with a single member are ignored.  With no group of size two or
    more the threshold is ``+inf`` and a warning is issued.
    """
    _check_alpha(alpha)
    dist = hcp2_distribution(group_scores)
    if dist is None:
        warnings.warn("no calibration group has two or more members; threshold is +inf",
                      RuntimeWarning, stacklevel=2)
        return math.inf
    return upper_quantile(dist, 1.0 - alpha ** 2)


def pooling_cdfs_threshold(group_scores, alpha: float) -> float:
    """``inf{t : mean_k F_k(t) >= 1 - alpha}`` with ``F_k`` the group ECDFs."""
    groups = _as_groups(group_scores)
    _check_alpha(alpha)
    k1 = len(groups)
    values = np.concatenate(groups)
    weights = np.concatenate([np.full(g.size, 1.0 / (k1 * g.size)) for g in groups])
    return upper_quantile(WeightedDistribution(values, weights), 1.0 - alpha)


def double_conformal_threshold(group_scores, alpha: float) -> float:
    groups = _as_groups(group_scores)
    _check_alpha(alpha)
    n = groups[0].size
    if any(g.size != n for g in groups):
        raise ValueError("double conformal requires equal group sizes")
    level = 1.0 - alpha / 2.0
    inner = np.array([
        upper_quantile(_with_inf_atom(g, np.full(n, 1.0 / (n + 1)), 1.0 / (n + 1)), level)
        for g in groups
    ])
    k1 = len(groups)
    w = 1.0 / (k1 + 1)
    return upper_quantile(_with_inf_atom(inner, np.full(k1, w), w), level)


def _pick(groups: list[np.ndarray], indices) -> np.ndarray:
    indices = np.asarray(indices, dtype=int).ravel()
    if indices.size != len(groups):
        raise ValueError("need exactly one index per group")
    for k, (g, i) in enumerate(zip(groups, indices)):
        if not 0 <= i < g.size:
            raise IndexError(f"index {i} out of range for group {k} of size {g.size}")
    return np.array([g[i] for g, i in zip(groups, indices)])


def subsampling_once_threshold(group_scores, indices, alpha: float) -> float:
    """Split conformal on one chosen member per group."""
    groups = _as_groups(group_scores)
    _check_alpha(alpha)
    s = _pick(groups, indices)
    w = 1.0 / (len(groups) + 1)
    return upper_quantile(_with_inf_atom(s, np.full(s.size, w), w), 1.0 - alpha)


def repeated_subsampling_threshold(group_scores, index_draws, alpha: float) -> float:
    """Aggregate of ``B`` subsampling-once runs.

    ``index_draws`` has one row per run and one column per group.
    """
    groups = _as_groups(group_scores)
    _check_alpha(alpha)
    draws = np.asarray(index_draws, dtype=int)
    if draws.ndim != 2 or draws.shape[0] < 1:
        raise ValueError("index_draws must be a non-empty (B, K1) array")
    b = draws.shape[0]
    k1 = len(groups)
    s = np.concatenate([_pick(groups, row) for row in draws])
    w = 1.0 / (b * (k1 + 1))
    return upper_quantile(_with_inf_atom(s, np.full(s.size, w), 1.0 / (k1 + 1)), 1.0 - alpha)


def bootstrap_groups(group_scores, index_draws) -> list[np.ndarray]:
    """Group ``k`` becomes ``(s_{k, i_k^(1)}, ..., s_{k, i_k^(B)})``."""
    groups = _as_groups(group_scores)
    draws = np.asarray(index_draws, dtype=int)
    return [groups[k][draws[:, k]] for k in range(len(groups))]


def draw_subsample_indices(sizes, rng: np.random.Generator, b: Optional[int] = None) -> np.ndarray:
    """Uniform member indices: shape ``(K1,)`` or ``(b, K1)``."""
    sizes = np.asarray(sizes, dtype=int)
    shape = sizes.shape if b is None else (b, sizes.size)
    return rng.integers(0, sizes, size=shape)


@dataclass(frozen=True)
class CalibrationInput:
    calib: GroupedDataset
    sfn: FittedScore
    alpha: float

    def __post_init__(self):
        if len(self.calib) == 0:
            raise ValueError("calibration set is empty")
        _check_alpha(self.alpha)

    def group_scores(self) -> list[np.ndarray]:
        X, y = self.calib.pooled()
        s = self.sfn.scores(X, y)
        return np.split(s, np.cumsum(self.calib.sizes)[:-1])


@dataclass(frozen=True, eq=False)
class CalibratedPredictor:
    """A fitted score plus a threshold; maps ``x`` to an interval."""

    sfn: FittedScore
    threshold: float
    method: str
    alpha: float
    k1: int
    k1_ge2: int = 0
    extra: dict = field(default_factory=dict)

    def intervals(self, X) -> tuple[np.ndarray, np.ndarray]:
        return self.sfn.intervals(X, self.threshold)

    def predict(self, x) -> tuple[float, float]:
        lo, hi = self.sfn.intervals(np.atleast_2d(np.asarray(x, dtype=float)), self.threshold)
        return float(lo[0]), float(hi[0])

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "method": self.method,
            "alpha": float(self.alpha),
            "threshold": encode_extended(self.threshold),
            "k1": int(self.k1),
            "k1_ge2": int(self.k1_ge2),
            "extra": self.extra,
            "score": self.sfn.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedPredictor":
        if d.get("format") != FORMAT_NAME:
            raise ValueError("not a predictor document")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported predictor version {d.get('version')!r}")
        return cls(
            sfn=FittedScore.from_dict(d["score"]),
            threshold=decode_extended(d["threshold"]),
            method=d["method"],
            alpha=float(d["alpha"]),
            k1=int(d["k1"]),
            k1_ge2=int(d.get("k1_ge2", 0)),
            extra=dict(d.get("extra", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibratedPredictor":
        return cls.from_dict(json.loads(text))


def encode_extended(v: float):
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    return float(v)


def decode_extended(v) -> float:
    if isinstance(v, str):
        if v in ("+inf", "inf"):
            return math.inf
        if v == "-inf":
            return -math.inf
        raise ValueError(f"bad extended real {v!r}")
    return float(v)


def calibrate(inp: CalibrationInput, method: str, rng: Optional[np.random.Generator] = None,
              indices: Optional[Sequence[int]] = None, index_draws=None,
              b: int = DEFAULT_B) -> CalibratedPredictor:
    """Run one threshold rule and package the result.

    The subsampling rules use ``indices``/``index_draws`` when given and
    otherwise draw them from ``rng``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    scores = inp.group_scores()
    sizes = inp.calib.sizes
    alpha = inp.alpha
    extra = {}
    if method == "split":
        t = split_conformal_threshold(scores, alpha)
    elif method == "hcp":
        t = hcp_threshold(scores, alpha)
    elif method == "hcp2":
        t = hcp2_threshold(scores, alpha)
    elif method == "pooling_cdfs":
        t = pooling_cdfs_threshold(scores, alpha)
    elif method == "double_conformal":
        t = double_conformal_threshold(scores, alpha)
    elif method == "subsampling_once":
        if indices is None:
            if rng is None:
                raise ValueError("subsampling_once needs indices or an rng")
            indices = draw_subsample_indices(sizes, rng)
        t = subsampling_once_threshold(scores, indices, alpha)
    else:
        if index_draws is None:
            if rng is None:
                raise ValueError("repeated_subsampling needs index draws or an rng")
            index_draws = draw_subsample_indices(sizes, rng, b)
        t = repeated_subsampling_threshold(scores, index_draws, alpha)
        extra["B"] = int(np.asarray(index_draws).shape[0])
    return CalibratedPredictor(inp.sfn, float(t), method, float(alpha), len(sizes),
                               int((sizes >= 2).sum()), extra)


def predict(p: CalibratedPredictor, x) -> tuple[float, float]:
    return p.predict(x)
