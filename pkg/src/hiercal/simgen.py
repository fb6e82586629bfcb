"""Seeded data-generating processes and the Lorenz-96 integrator.

Randomness
----------
All draws come from numpy's counter-based ``Philox`` bit generator.  A
substream is addressed by a seed plus a path of labels, e.g.
``substream(seed, "grouped", k)`` for group ``k``; the 128-bit Philox key is
the BLAKE2b digest of that address.  Group ``k`` therefore gets the same
numbers no matter how many groups are generated, in which order, or on how
many workers.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .core import Group, GroupedDataset

X_LOW, X_HIGH = 0.0, 5.0


def _address_digest(seed: int, path: Iterable) -> bytes:
    text = ":".join([str(int(seed))] + [str(p) for p in path])
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()


def derive_seed(seed: int, *path) -> int:
    """64-bit child seed for a labelled sub-task."""
    return int.from_bytes(_address_digest(seed, path)[:8], "little")


def substream(seed: int, *path) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *path)``."""
    key = int.from_bytes(_address_digest(seed, path), "little")
    return np.random.Generator(np.random.Philox(key=key))


def true_mean(x):
    """``1 + x + 0.1 x^2``, shared by the Gaussian simulations."""
    x = np.asarray(x, dtype=float)
    return 1.0 + x + 0.1 * x ** 2


# grouped Gaussian with compound-symmetry covariance (2 on the diagonal, 1 off it)

@dataclass(frozen=True)
class GroupedGaussianConfig:
    K: int
    N: int
    seed: int = 0

    def __post_init__(self):
        if self.K < 2 or self.N < 1:
            raise ValueError("need K >= 2 and N >= 1")


GROUPED_NOISE_SD = math.sqrt(2.0)


def gen_grouped_gaussian(cfg: GroupedGaussianConfig) -> GroupedDataset:
    """``X = g + e`` and ``Y = mu(X) + h + f`` with shared ``g, h`` per group.

    A shared standard normal plus an idiosyncratic one gives variance 2 and
    within-group covariance 1 for both ``X`` and the noise.
    """
    groups = []
    for k in range(cfg.K):
        rng = substream(cfg.seed, "grouped", k)
        z = rng.standard_normal(2 + 2 * cfg.N)
        x = z[0] + z[2:2 + cfg.N]
        y = true_mean(x) + z[1] + z[2 + cfg.N:]
        groups.append(Group(k, x.reshape(-1, 1), y))
    return GroupedDataset(tuple(groups))


def gen_grouped_gaussian_test(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` test points, each from a fresh group.

    Given ``X = x`` the response is ``N(mu(x), 2)``.
    """
    rng = substream(seed, "grouped-test")
    z = rng.standard_normal((4, n))
    x = z[0] + z[1]
    y = true_mean(x) + z[2] + z[3]
    return x.reshape(-1, 1), y


# repeated measurements: one X per group, N iid responses

@dataclass(frozen=True)
class RepeatedGaussianConfig:
    K: int
    N: int = 2
    setting: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.K < 2 or self.N < 1:
            raise ValueError("need K >= 2 and N >= 1")
        if self.setting not in (1, 2):
            raise ValueError("setting must be 1 or 2")


def noise_sd(x, setting: int) -> np.ndarray:
    """Conditional standard deviation of ``Y`` given ``X = x``.

    Setting 1 is constant (2).  Setting 2 is 1 below 3, ``1 + 4 (x-3)^4`` on
    ``[3, 4)`` and 5 from 4 on.
    """
    x = np.asarray(x, dtype=float)
    if setting == 1:
        return np.full(x.shape, 2.0)
    if setting == 2:
        return np.where(x < 3.0, 1.0, np.where(x < 4.0, 1.0 + 4.0 * (x - 3.0) ** 4, 5.0))
    raise ValueError("setting must be 1 or 2")


def gen_repeated_gaussian(cfg: RepeatedGaussianConfig) -> GroupedDataset:
    groups = []
    for k in range(cfg.K):
        rng = substream(cfg.seed, "repeated", k)
        x = X_LOW + (X_HIGH - X_LOW) * rng.random()
        z = rng.standard_normal(cfg.N)
        y = true_mean(x) + noise_sd(x, cfg.setting) * z
        groups.append(Group(k, np.full((cfg.N, 1), x), y))
    return GroupedDataset(tuple(groups))


def gen_repeated_gaussian_test(n: int, setting: int, seed: int):
    """Test features, one response each, and the true conditional law.

    Returns ``(X, y, mu, sigma)`` with ``mu``/``sigma`` evaluated at ``X``.
    """
    rng = substream(seed, "repeated-test")
    x = X_LOW + (X_HIGH - X_LOW) * rng.random(n)
    mu, sigma = true_mean(x), noise_sd(x, setting)
    y = mu + sigma * rng.standard_normal(n)
    return x.reshape(-1, 1), y, mu, sigma


# Lorenz-96

@dataclass(frozen=True)
class L96Config:
    M: int = 10
    F: float = 10.0
    dt: float = 0.05
    T0: float = 20.0
    T: float = 0.05
    K: int = 800
    N: int = 50
    r: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.M < 4:
            raise ValueError("Lorenz-96 needs M >= 4")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.r < 0:
            raise ValueError("r must be nonnegative")
        if self.T < 0 or self.T0 < 0:
            raise ValueError("durations must be nonnegative")


def l96_derivative(u, F: float) -> np.ndarray:
    """``du_m/dt = -u_{m-1} (u_{m-2} - u_{m+1}) - u_m + F`` with cyclic indices.

    Works on the last axis, so ``u`` may hold a batch of states.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1] < 4:
        raise ValueError("Lorenz-96 needs M >= 4")
    um1 = np.roll(u, 1, axis=-1)
    um2 = np.roll(u, 2, axis=-1)
    up1 = np.roll(u, -1, axis=-1)
    return -um1 * (um2 - up1) - u + F


def rk4_step(u: np.ndarray, h: float, F: float) -> np.ndarray:
    k1 = l96_derivative(u, F)
    k2 = l96_derivative(u + 0.5 * h * k1, F)
    k3 = l96_derivative(u + 0.5 * h * k2, F)
    k4 = l96_derivative(u + h * k3, F)
    return u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_plan(duration: float, dt: float) -> tuple[int, float]:
    ratio = duration / dt
    n = round(ratio)
    if abs(ratio - n) <= 1e-9 * max(1.0, ratio):
        return int(n), 0.0
    n = math.floor(ratio)
    return int(n), duration - n * dt


def l96_integrate(u0, duration: float, cfg: L96Config = L96Config()) -> np.ndarray:
    """Classical RK4 with step ``cfg.dt``; a short final step covers any remainder."""
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    u = np.array(u0, dtype=float)
    n, rem = _step_plan(duration, cfg.dt)
    for _ in range(n):
        u = rk4_step(u, cfg.dt, cfg.F)
    if rem > 0:
        u = rk4_step(u, rem, cfg.F)
    return u


def _l96_draws(cfg: L96Config, label: str, index: int, n_responses: int):
    rng = substream(cfg.seed, label, index)
    return rng.standard_normal(cfg.M), rng.standard_normal((n_responses, cfg.M))


def l96_responses(cfg: L96Config, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """First coordinate after running each perturbed start ``x + r * eta`` for ``cfg.T``.

    ``x`` has shape ``(n, M)`` and ``eta`` shape ``(n, draws, M)``.
    """
    starts = x[:, None, :] + cfg.r * eta
    return l96_integrate(starts, cfg.T, cfg)[..., 0]


def gen_l96_dataset(cfg: L96Config) -> GroupedDataset:
    """Spun-up initial conditions with ``N`` perturbed-forecast responses each."""
    u, eta = zip(*(_l96_draws(cfg, "l96", k, cfg.N) for k in range(cfg.K)))
    x = l96_integrate(np.stack(u), cfg.T0, cfg)
    y = l96_responses(cfg, x, np.stack(eta))
    return GroupedDataset(tuple(
        Group(k, np.repeat(x[k:k + 1], cfg.N, axis=0), y[k]) for k in range(cfg.K)))


def gen_l96_test(cfg: L96Config, n: int, draws: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` fresh initial conditions with ``draws`` responses each.

    Returns ``X`` of shape ``(n, M)`` and ``Y`` of shape ``(n, draws)``.
    """
    u, eta = zip(*(_l96_draws(cfg, "l96-test", j, draws) for j in range(n)))
    x = l96_integrate(np.stack(u), cfg.T0, cfg)
    return x, l96_responses(cfg, x, np.stack(eta))


# newline-delimited JSON datasets

def write_dataset(ds: GroupedDataset, fh: IO[str]) -> None:
    """One group per line: ``{"group_id": k, "members": [{"x": [...], "y": v}, ...]}``."""
    for g in ds:
        members = [{"x": [float(v) for v in row], "y": float(yv)} for row, yv in zip(g.x, g.y)]
        fh.write(json.dumps({"group_id": int(g.group_id), "members": members}) + "\n")


def read_dataset(fh: IO[str]) -> GroupedDataset:
    groups = []
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            members = rec["members"]
            x = np.array([m["x"] for m in members], dtype=float)
            y = np.array([m["y"] for m in members], dtype=float)
            groups.append(Group(int(rec["group_id"]), x, y))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: malformed group record ({exc})") from exc
    return GroupedDataset(tuple(groups))
