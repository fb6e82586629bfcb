"""Coverage metrics and the multi-trial experiment runner.

Presets
-------
``table1_small`` / ``table1_large``
    Grouped Gaussian data, least-squares residual score, HCP against the
    pooling, double-conformal and subsampling rules.
``table2`` / ``trivial_baseline``
    Repeated measurements with kernel regression, both scores, HCP and HCP2
    (the baseline preset adds HCP run at ``alpha**2``).
``l96``
    Lorenz-96 ensemble forecasts with a k-nearest-neighbour model and the
    rescaled score; conditional miscoverage is estimated by Monte Carlo.
``jackknife``
    Hierarchical jackknife+ (marginal and second-moment) on all groups.

Each trial draws its data from substreams of ``derive_seed(seed, "trial", t)``
so results do not depend on the number of workers or their scheduling.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from . import calibrators as cal
from .core import GroupedDataset
from .jackknife import (fit_loo, jackknife_plus_intervals,
                        jackknife_plus_second_moment_intervals)
from .scores import FittedScore, fit_score
from .simgen import (GROUPED_NOISE_SD, GroupedGaussianConfig, L96Config,
                     RepeatedGaussianConfig, derive_seed, gen_grouped_gaussian,
                     gen_grouped_gaussian_test, gen_l96_dataset, gen_l96_test,
                     gen_repeated_gaussian, gen_repeated_gaussian_test, noise_sd,
                     substream, true_mean)

CSV_COLUMNS = ("preset", "method", "trial", "coverage", "width", "inf_count",
               "alpha_d", "alpha_d_sq")
DEFAULT_TRIALS = 100

PRESETS: dict[str, dict] = {
    "table1_small": dict(K=20, N=2, alpha=0.2, test_size=1000, B=cal.DEFAULT_B,
                         methods=["hcp", "pooling_cdfs", "double_conformal",
                                  "subsampling_once", "repeated_subsampling"]),
    "table1_large": dict(K=100, N=5, alpha=0.2, test_size=1000, B=cal.DEFAULT_B,
                         methods=["hcp", "pooling_cdfs", "double_conformal",
                                  "subsampling_once", "repeated_subsampling"]),
    "table2": dict(K=1000, N=2, alpha=0.2, test_size=1000, h=0.5, settings=[1, 2],
                   scores=["residual", "rescaled"], methods=["hcp", "hcp2"]),
    "trivial_baseline": dict(K=1000, N=2, alpha=0.2, test_size=1000, h=0.5,
                             settings=[1, 2], scores=["residual", "rescaled"],
                             methods=["hcp", "hcp2", "hcp_alpha_sq"]),
    "l96": dict(K=200, N=20, alpha=0.2, test_size=500, mc_draws=200, k=20,
                score="rescaled", horizons=[0.05, 0.5], M=10, F=10.0, dt=0.05,
                T0=20.0, r=0.01, methods=["hcp", "hcp2"], trials=1),
    "jackknife": dict(K=20, N=2, alpha=0.2, test_size=1000, generator="grouped",
                      setting=1, regressor="least_squares",
                      methods=["jackknife_plus", "jackknife_plus_2"]),
}


# metrics

def conditional_miscoverage_gaussian(lower, upper, mu, sigma) -> np.ndarray:
    """``P(Y not in [lower, upper])`` for ``Y ~ N(mu, sigma^2)``, elementwise."""
    lower, upper, mu, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                                    for a in (lower, upper, mu, sigma)))
    if (sigma <= 0).any():
        raise ValueError("sigma must be positive")
    if (lower > upper).any():
        raise ValueError("interval lower end exceeds upper end")
    below = ndtr((lower - mu) / sigma)
    above = ndtr((mu - upper) / sigma)
    return np.clip(below + above, 0.0, 1.0)


def miscoverage_monte_carlo(lower, upper, draws) -> np.ndarray:
    """Fraction of each row of ``draws`` that falls outside its interval."""
    draws = np.asarray(draws, dtype=float)
    inside = (draws >= np.asarray(lower)[:, None]) & (draws <= np.asarray(upper)[:, None])
    return 1.0 - inside.mean(axis=1)


def empirical_coverage(lower, upper, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty test set")
    return float(np.mean((y >= lower) & (y <= upper)))


def mean_width(lower, upper) -> tuple[float, int]:
    """Average ``upper - lower`` and the number of infinite intervals.

    Any infinite interval makes the mean ``+inf``.
    """
    width = np.asarray(upper, dtype=float) - np.asarray(lower, dtype=float)
    n_inf = int(np.isinf(width).sum())
    if n_inf:
        return math.inf, n_inf
    return math.fsum(width) / width.size, 0


def _se(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2 or not np.isfinite(values).all():
        return math.nan
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


# reports

@dataclass
class TrialResult:
    trial_id: int
    method: str
    mean_coverage: float
    mean_width: float
    inf_count: int
    mean_alpha_d: float
    mean_alpha_d_sq: float
    test_se: dict = field(default_factory=dict)


def _trial_result(trial_id, method, lower, upper, y, alpha_d) -> TrialResult:
    width, n_inf = mean_width(lower, upper)
    alpha_d = np.asarray(alpha_d, dtype=float)
    covered = ((y >= lower) & (y <= upper)).astype(float)
    return TrialResult(
        trial_id=trial_id,
        method=method,
        mean_coverage=empirical_coverage(lower, upper, y),
        mean_width=width,
        inf_count=n_inf,
        mean_alpha_d=math.fsum(alpha_d) / alpha_d.size,
        mean_alpha_d_sq=math.fsum(alpha_d ** 2) / alpha_d.size,
        test_se={
            "coverage": _se(covered),
            "width": _se(np.asarray(upper) - np.asarray(lower)),
            "alpha_d": _se(alpha_d),
            "alpha_d_sq": _se(alpha_d ** 2),
        },
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        if v == math.inf:
            return "+inf"
        if v == -math.inf:
            return "-inf"
        return repr(v)
    return str(v)


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "+inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


@dataclass
class ExperimentReport:
    preset: str
    config: dict
    rows: list[TrialResult]

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def column(self, method: str, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if r.method == method], dtype=float)

    def mean(self, method: str, name: str) -> float:
        vals = self.column(method, name)
        return math.fsum(vals) / vals.size

    def se(self, method: str, name: str) -> float:
        return _se(self.column(method, name))

    def summary(self) -> dict:
        out = {}
        for m in self.methods:
            rows = [r for r in self.rows if r.method == m]
            entry = {"trials": len(rows), "inf_count": int(sum(r.inf_count for r in rows))}
            for name, attr in (("coverage", "mean_coverage"), ("width", "mean_width"),
                               ("alpha_d", "mean_alpha_d"), ("alpha_d_sq", "mean_alpha_d_sq")):
                entry[name] = {"mean": self.mean(m, attr), "se": self.se(m, attr)}
            entry["test_set_se"] = {
                k: math.fsum(r.test_se[k] for r in rows) / len(rows) for k in rows[0].test_se
            }
            out[m] = entry
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([self.preset, r.method, r.trial_id, _fmt(r.mean_coverage),
                        _fmt(r.mean_width), r.inf_count, _fmt(r.mean_alpha_d),
                        _fmt(r.mean_alpha_d_sq)])
        return buf.getvalue()

    def summary_json(self) -> str:
        doc = {
            "preset": self.preset,
            "config": self.config,
            "summary": self.summary(),
            "notes": {
                "se": "standard error across trials (sample sd / sqrt(trials))",
                "test_set_se": "standard error over the test set, averaged over trials",
            },
        }
        return json.dumps(_json_safe(doc), indent=2, sort_keys=True)


# trials

def _bounds(mu_hat: np.ndarray, scale: np.ndarray, threshold: float):
    if math.isinf(threshold):
        return np.full(mu_hat.size, -math.inf), np.full(mu_hat.size, math.inf)
    return mu_hat - threshold * scale, mu_hat + threshold * scale


def _split(data: GroupedDataset) -> tuple[GroupedDataset, GroupedDataset]:
    return data.split(math.ceil(len(data) / 2))


def _group_scores(sfn: FittedScore, calib: GroupedDataset, alpha: float):
    return cal.CalibrationInput(calib, sfn, alpha).group_scores()


def _trial_grouped(cfg: dict, seed: int, trial_id: int) -> list[TrialResult]:
    data = gen_grouped_gaussian(GroupedGaussianConfig(cfg["K"], cfg["N"], derive_seed(seed, "data")))
    train, calib = _split(data)
    sfn = fit_score(train, "least_squares", "residual")
    alpha = cfg["alpha"]
    scores = _group_scores(sfn, calib, alpha)
    X, y = gen_grouped_gaussian_test(cfg["test_size"], derive_seed(seed, "test"))
    mu_hat, scale = sfn.mean_model.predict(X), sfn.scale(X)
    mu_true = true_mean(X[:, 0])
    rng = substream(seed, "subsample")
    sizes = calib.sizes
    out = []
    for method in cfg["methods"]:
        if method == "subsampling_once":
            t = cal.subsampling_once_threshold(scores, cal.draw_subsample_indices(sizes, rng), alpha)
        elif method == "repeated_subsampling":
            draws = cal.draw_subsample_indices(sizes, rng, cfg["B"])
            t = cal.repeated_subsampling_threshold(scores, draws, alpha)
        else:
            t = _simple_threshold(method, scores, alpha)
        lo, hi = _bounds(mu_hat, scale, t)
        ad = conditional_miscoverage_gaussian(lo, hi, mu_true, GROUPED_NOISE_SD)
        out.append(_trial_result(trial_id, method, lo, hi, y, ad))
    return out


def _simple_threshold(method: str, scores, alpha: float) -> float:
    if method == "hcp":
        return cal.hcp_threshold(scores, alpha)
    if method == "hcp2":
        return cal.hcp2_threshold(scores, alpha)
    if method == "hcp_alpha_sq":
        return cal.hcp_threshold(scores, alpha ** 2)
    if method == "pooling_cdfs":
        return cal.pooling_cdfs_threshold(scores, alpha)
    if method == "double_conformal":
        return cal.double_conformal_threshold(scores, alpha)
    if method == "split":
        return cal.split_conformal_threshold(scores, alpha)
    raise ValueError(f"unknown method {method!r}")


def _trial_repeated(cfg: dict, seed: int, trial_id: int) -> list[TrialResult]:
    alpha = cfg["alpha"]
    out = []
    for setting in cfg["settings"]:
        data = gen_repeated_gaussian(RepeatedGaussianConfig(
            cfg["K"], cfg["N"], setting, derive_seed(seed, "data", setting)))
        train, calib = _split(data)
        X, y, mu_true, sigma_true = gen_repeated_gaussian_test(
            cfg["test_size"], setting, derive_seed(seed, "test", setting))
        for score_kind in cfg["scores"]:
            sfn = fit_score(train, "kernel", score_kind, h=cfg["h"])
            scores = _group_scores(sfn, calib, alpha)
            mu_hat, scale = sfn.mean_model.predict(X), sfn.scale(X)
            for method in cfg["methods"]:
                lo, hi = _bounds(mu_hat, scale, _simple_threshold(method, scores, alpha))
                ad = conditional_miscoverage_gaussian(lo, hi, mu_true, sigma_true)
                out.append(_trial_result(trial_id, f"s{setting}-{score_kind}:{method}",
                                         lo, hi, y, ad))
    return out


def _trial_l96(cfg: dict, seed: int, trial_id: int) -> list[TrialResult]:
    alpha = cfg["alpha"]
    out = []
    for horizon in cfg["horizons"]:
        base = dict(M=cfg["M"], F=cfg["F"], dt=cfg["dt"], T0=cfg["T0"], T=horizon,
                    K=cfg["K"], N=cfg["N"], r=cfg["r"])
        data = gen_l96_dataset(L96Config(**base, seed=derive_seed(seed, "data")))
        train, calib = _split(data)
        X, Y = gen_l96_test(L96Config(**base, seed=derive_seed(seed, "test")),
                            cfg["test_size"], 1 + cfg["mc_draws"])
        sfn = fit_score(train, "knn", cfg["score"], k=cfg["k"])
        scores = _group_scores(sfn, calib, alpha)
        mu_hat, scale = sfn.mean_model.predict(X), sfn.scale(X)
        for method in cfg["methods"]:
            lo, hi = _bounds(mu_hat, scale, _simple_threshold(method, scores, alpha))
            ad = miscoverage_monte_carlo(lo, hi, Y[:, 1:])
            out.append(_trial_result(trial_id, f"T{horizon:g}:{method}", lo, hi, Y[:, 0], ad))
    return out


def _trial_jackknife(cfg: dict, seed: int, trial_id: int) -> list[TrialResult]:
    alpha = cfg["alpha"]
    data_seed, test_seed = derive_seed(seed, "data"), derive_seed(seed, "test")
    if cfg["generator"] == "grouped":
        data = gen_grouped_gaussian(GroupedGaussianConfig(cfg["K"], cfg["N"], data_seed))
        X, y = gen_grouped_gaussian_test(cfg["test_size"], test_seed)
        mu_true, sigma_true = true_mean(X[:, 0]), GROUPED_NOISE_SD
    elif cfg["generator"] == "repeated":
        data = gen_repeated_gaussian(RepeatedGaussianConfig(
            cfg["K"], cfg["N"], cfg["setting"], data_seed))
        X, y, mu_true, sigma_true = gen_repeated_gaussian_test(
            cfg["test_size"], cfg["setting"], test_seed)
    else:
        raise ValueError(f"unknown generator {cfg['generator']!r}")
    ens = fit_loo(data, cfg["regressor"], {k: cfg[k] for k in ("h", "k") if k in cfg})
    out = []
    for method in cfg["methods"]:
        if method == "jackknife_plus":
            lo, hi = jackknife_plus_intervals(ens, X, alpha)
        elif method == "jackknife_plus_2":
            lo, hi = jackknife_plus_second_moment_intervals(ens, X, alpha)
        else:
            raise ValueError(f"unknown method {method!r}")
        ad = conditional_miscoverage_gaussian(lo, hi, mu_true, sigma_true)
        out.append(_trial_result(trial_id, method, lo, hi, y, ad))
    return out


_TRIAL_FNS = {
    "table1_small": _trial_grouped,
    "table1_large": _trial_grouped,
    "table2": _trial_repeated,
    "trivial_baseline": _trial_repeated,
    "l96": _trial_l96,
    "jackknife": _trial_jackknife,
}


def _run_trial(args) -> list[TrialResult]:
    preset, cfg, seed, trial_id = args
    return _TRIAL_FNS[preset](cfg, derive_seed(seed, "trial", trial_id), trial_id)


def worker_count() -> int:
    env = os.environ.get("HIERCAL_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("HIERCAL_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def resolve_config(preset: str, overrides: dict | None = None) -> dict:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    cfg = json.loads(json.dumps(PRESETS[preset]))
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ValueError(f"preset {preset!r} has no parameter {key!r}")
        cfg[key] = value
    return cfg


def run_experiment(preset: str, overrides: dict | None = None, seed: int = 0,
                   trials: int | None = None, workers: int | None = None) -> ExperimentReport:
    """Run ``trials`` independent repetitions of a preset.

    ``overrides`` replaces preset parameters (e.g. ``{"K": 40}``).  Trials
    are spread over ``workers`` processes (default: ``HIERCAL_THREADS`` or
    the CPU count); the report is ordered by trial regardless.
    """
    cfg = resolve_config(preset, overrides)
    n_trials = trials if trials is not None else cfg.pop("trials", DEFAULT_TRIALS)
    cfg.pop("trials", None)
    if n_trials < 1:
        raise ValueError("trials must be >= 1")
    workers = worker_count() if workers is None else workers
    jobs = [(preset, cfg, int(seed), t) for t in range(n_trials)]
    if workers > 1 and n_trials > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_trials)) as pool:
            chunks = list(pool.map(_run_trial, jobs, chunksize=max(1, n_trials // (4 * workers))))
    else:
        chunks = [_run_trial(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    config = dict(cfg, preset=preset, seed=int(seed), trials=n_trials)
    return ExperimentReport(preset, config, rows)


def write_report(report: ExperimentReport, csv_path: str) -> str:
    """Write the CSV and a ``.json`` summary next to it; returns the JSON path."""
    root, _ = os.path.splitext(csv_path)
    json_path = root + ".json"
    with open(csv_path, "w", newline="") as fh:
        fh.write(report.to_csv())
    with open(json_path, "w") as fh:
        fh.write(report.summary_json() + "\n")
    return json_path


def trial_result_dict(r: TrialResult) -> dict:
    return _json_safe(asdict(r))
