"""``hiercal`` command line: generate, calibrate, predict, experiment, plot.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 runtime error.  Every
command echoes its resolved configuration as one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import secrets
import sys
from xml.sax.saxutils import escape

import numpy as np

from . import calibrators as cal
from . import eval as ev
from .scores import DEFAULT_BANDWIDTH, DEFAULT_NEIGHBORS, fit_score
from .simgen import (GroupedGaussianConfig, L96Config, RepeatedGaussianConfig,
                     gen_grouped_gaussian, gen_l96_dataset, gen_repeated_gaussian,
                     read_dataset, substream, write_dataset)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4
GENERATE_PRESETS = ("grouped", "repeated-s1", "repeated-s2", "l96")


class UsageError(Exception):
    pass


def _echo(command: str, config: dict) -> None:
    print(json.dumps({"command": command, **config}, sort_keys=True), file=sys.stderr)


def _seed(value: int | None) -> int:
    if value is not None:
        return value
    seed = secrets.randbits(63)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def format_real(v: float) -> str:
    """``-inf``/``+inf`` sentinels; integral values without a trailing ``.0``."""
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


# generate

def cmd_generate(args) -> int:
    seed = _seed(args.seed)
    _echo("generate", {"preset": args.preset, "k": args.k, "n": args.n, "seed": seed,
                       "horizon": args.horizon, "out": args.out})
    try:
        if args.preset == "grouped":
            ds = gen_grouped_gaussian(GroupedGaussianConfig(args.k, args.n, seed))
        elif args.preset in ("repeated-s1", "repeated-s2"):
            ds = gen_repeated_gaussian(RepeatedGaussianConfig(
                args.k, args.n, int(args.preset[-1]), seed))
        else:
            ds = gen_l96_dataset(L96Config(K=args.k, N=args.n, T=args.horizon, seed=seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with open(args.out, "w") as fh:
        write_dataset(ds, fh)
    return EXIT_OK


# calibrate / predict

def cmd_calibrate(args) -> int:
    seed = _seed(args.seed)
    config = {k: getattr(args, k) for k in ("method", "alpha", "score", "regressor",
                                            "bandwidth", "neighbors", "data", "split", "out", "b")}
    _echo("calibrate", dict(config, seed=seed))
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if not 0 < args.split < 1:
        raise UsageError("--split must lie in (0, 1)")
    if args.score == "rescaled" and args.regressor == "least_squares":
        raise UsageError("rescaled score needs a scale model; use --regressor kernel or knn")
    with open(args.data) as fh:
        try:
            data = read_dataset(fh)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if len(data) < 2:
        raise UsageError("dataset needs at least two groups")
    n_train = min(len(data) - 1, math.ceil(args.split * len(data)))
    train, calib = data.split(n_train)
    try:
        sfn = fit_score(train, args.regressor, args.score, h=args.bandwidth, k=args.neighbors)
        p = cal.calibrate(cal.CalibrationInput(calib, sfn, args.alpha), args.method,
                          rng=substream(seed, "calibrate"), b=args.b)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with open(args.out, "w") as fh:
        fh.write(p.to_json() + "\n")
    print(format_real(p.threshold))
    return EXIT_OK


def _parse_x(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"malformed --x {text!r}") from exc
    if not vals or not all(math.isfinite(v) for v in vals):
        raise UsageError(f"malformed --x {text!r}")
    return np.array(vals)


def cmd_predict(args) -> int:
    _echo("predict", {"model": args.model, "x": args.x})
    x = _parse_x(args.x)
    with open(args.model) as fh:
        text = fh.read()
    try:
        p = cal.CalibratedPredictor.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid model file: {exc}") from exc
    if x.size != p.sfn.dim:
        raise UsageError(f"dimension mismatch: model expects {p.sfn.dim}, got {x.size}")
    lo, hi = p.predict(x)
    print(f"{format_real(lo)},{format_real(hi)}")
    return EXIT_OK


# experiment

def _overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} is not key=value")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def cmd_experiment(args) -> int:
    seed = _seed(args.seed)
    overrides = _overrides(args.set)
    try:
        cfg = ev.resolve_config(args.preset, overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be >= 1")
    _echo("experiment", {"preset": args.preset, "trials": args.trials, "seed": seed,
                         "out": args.out, "config": cfg})
    report = ev.run_experiment(args.preset, overrides, seed=seed, trials=args.trials)
    json_path = ev.write_report(report, args.out)
    for method, entry in report.summary().items():
        print(f"{method}: coverage {entry['coverage']['mean']:.4f} "
              f"width {entry['width']['mean']:.4f} alpha_d_sq {entry['alpha_d_sq']['mean']:.4f}")
    print(f"wrote {args.out} and {json_path}", file=sys.stderr)
    return EXIT_OK


# plot

def _read_column(path: str, column: str) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise UsageError("CSV has no header")
        if column not in reader.fieldnames:
            raise UsageError(f"unknown column {column!r}")
        groups: dict[str, list[float]] = {}
        for row in reader:
            try:
                groups.setdefault(row["method"], []).append(float(row[column]))
            except (KeyError, TypeError, ValueError) as exc:
                raise UsageError(f"bad CSV row: {exc}") from exc
    if not groups:
        raise UsageError("CSV has no data rows")
    return groups


def _num(v: float) -> str:
    return f"{v:.2f}"


def _nice_range(vals: np.ndarray) -> tuple[float, float]:
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.05, 0.5)
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def render_svg(groups: dict[str, list[float]], column: str, kind: str) -> str:
    """Box plots or histograms, one panel slot per method, as a standalone SVG."""
    names = list(groups)
    finite = {m: np.array([v for v in groups[m] if math.isfinite(v)]) for m in names}
    pooled = np.concatenate([v for v in finite.values() if v.size] or [np.zeros(1)])
    vmin, vmax = _nice_range(pooled)
    slot, left, top, plot_h = 120, 70, 30, 300
    width = left + slot * len(names) + 20
    height = top + plot_h + 60

    def ypos(v):
        return top + plot_h * (vmax - v) / (vmax - vmin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
             f'<line x1="{left}" y1="{top + plot_h}" x2="{width - 20}" y2="{top + plot_h}" stroke="black"/>',
             f'<text x="15" y="{top + plot_h / 2:.2f}" transform="rotate(-90 15 {top + plot_h / 2:.2f})" '
             f'text-anchor="middle">{escape(column)}</text>',
             f'<text x="{(left + width - 20) / 2:.2f}" y="{height - 8}" text-anchor="middle">method</text>']
    for tick in np.linspace(vmin, vmax, 5):
        y = ypos(tick)
        parts.append(f'<line x1="{left - 4}" y1="{_num(y)}" x2="{left}" y2="{_num(y)}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{_num(y + 4)}" text-anchor="end">{tick:.4g}</text>')
    for i, m in enumerate(names):
        cx = left + slot * i + slot / 2
        vals = finite[m]
        parts.append(f'<text x="{_num(cx)}" y="{top + plot_h + 16}" text-anchor="middle">{escape(m)}</text>')
        n_inf = len(groups[m]) - vals.size
        if n_inf:
            parts.append(f'<text x="{_num(cx)}" y="{top - 8}" text-anchor="middle">{n_inf} inf</text>')
        if vals.size == 0:
            continue
        if kind == "box":
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            iqr = q3 - q1
            lo_w = vals[vals >= q1 - 1.5 * iqr].min()
            hi_w = vals[vals <= q3 + 1.5 * iqr].max()
            bw = slot * 0.5
            parts.append(f'<line x1="{_num(cx)}" y1="{_num(ypos(hi_w))}" x2="{_num(cx)}" '
                         f'y2="{_num(ypos(lo_w))}" stroke="black"/>')
            parts.append(f'<rect x="{_num(cx - bw / 2)}" y="{_num(ypos(q3))}" width="{_num(bw)}" '
                         f'height="{_num(ypos(q1) - ypos(q3))}" fill="#9ecae1" stroke="black"/>')
            parts.append(f'<line x1="{_num(cx - bw / 2)}" y1="{_num(ypos(med))}" x2="{_num(cx + bw / 2)}" '
                         f'y2="{_num(ypos(med))}" stroke="black" stroke-width="2"/>')
            for v in vals[(vals < lo_w) | (vals > hi_w)]:
                parts.append(f'<circle cx="{_num(cx)}" cy="{_num(ypos(v))}" r="2" fill="none" stroke="black"/>')
        else:
            counts, edges = np.histogram(vals, bins=20, range=(vmin, vmax))
            scale = (slot * 0.8) / max(counts.max(), 1)
            x0 = cx - slot * 0.4
            for c, e0, e1 in zip(counts, edges[:-1], edges[1:]):
                if c:
                    parts.append(f'<rect x="{_num(x0)}" y="{_num(ypos(e1))}" width="{_num(c * scale)}" '
                                 f'height="{_num(ypos(e0) - ypos(e1))}" fill="#9ecae1" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    _echo("plot", {"in": args.inp, "kind": args.kind, "column": args.column, "out": args.out})
    groups = _read_column(args.inp, args.column)
    svg = render_svg(groups, args.column, args.kind)
    with open(args.out, "w") as fh:
        fh.write(svg)
    return EXIT_OK


# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hiercal", description="Conformal prediction for grouped data.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a dataset as NDJSON")
    g.add_argument("--preset", required=True, choices=GENERATE_PRESETS)
    g.add_argument("--k", type=int, required=True, help="number of groups")
    g.add_argument("--n", type=int, required=True, help="members per group")
    g.add_argument("--seed", type=int)
    g.add_argument("--horizon", type=float, default=0.05, help="forecast time (l96 only)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("calibrate", help="fit a score and a threshold")
    c.add_argument("--method", required=True, choices=cal.METHODS)
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--score", choices=("residual", "rescaled"), default="residual")
    c.add_argument("--regressor", choices=("least_squares", "kernel", "knn"), default="least_squares")
    c.add_argument("--bandwidth", type=float, default=DEFAULT_BANDWIDTH)
    c.add_argument("--neighbors", type=int, default=DEFAULT_NEIGHBORS)
    c.add_argument("--b", type=int, default=cal.DEFAULT_B, help="draws for repeated_subsampling")
    c.add_argument("--data", required=True)
    c.add_argument("--split", type=float, default=0.5, help="fraction of groups used for training")
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("predict", help="interval for one feature vector")
    r.add_argument("--model", required=True)
    r.add_argument("--x", required=True, help='comma-separated features, e.g. "1.5,2"')
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("experiment", help="run a multi-trial preset")
    e.add_argument("--preset", required=True, choices=tuple(ev.PRESETS))
    e.add_argument("--trials", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a preset parameter (JSON value), repeatable")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)

    pl = sub.add_parser("plot", help="SVG box plot or histogram of a report column")
    pl.add_argument("--in", dest="inp", required=True)
    pl.add_argument("--kind", choices=("box", "hist"), default="box")
    pl.add_argument("--column", default="coverage")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
