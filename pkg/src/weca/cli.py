"""Command-line entry point: ``weca <command> [--config FILE] [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import anomaly as an
from .config import ConfigError, ExperimentConfig, load_config
from .datagen import DataError, NormStats, split, write_csv
from .evaluation import EvaluationError, aggregate, fingerprint, read_run_reports, write_run_reports
from .experiment import Workspace, bench, checkpoint_path, load_series, run_regime
from .model import load_checkpoint
from .trainer import REGIMES, TrainingError

log = logging.getLogger("weca")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    level = os.environ.get("WECA_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"WECA_LOG must be one of error, info, debug (got {level!r})")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg.experiment.out = args.out
    return cfg


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.experiment.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg.data.seed = args.seed
    out = _out(cfg)
    path = out / "data.csv"
    try:
        rows = write_csv(load_series(cfg), path)
    except OSError as exc:
        raise RuntimeError(f"cannot write {path}: {exc}") from exc
    print(f"wrote {rows} rows to {path}")
    return EXIT_OK


def preview_rows(cfg: ExperimentConfig, series_id: str, onset: int, seed: int):
    """(t, original, anomaly, augmented) over one T+H window, in original units.

    The window is the last T+H days of the series' train partition; the curve
    is scaled by the series' train std, matching injection in z-scored space.
    """
    T, H = cfg.data.T, cfg.data.H
    series_set = load_series(cfg)
    try:
        series_set[series_id]
    except KeyError:
        raise UsageError(f"unknown series id {series_id!r}") from None
    train_part = split(series_set, cfg.split_spec(), T, H)[0]
    stats = NormStats.from_train(train_part)
    values = train_part[series_id].values[-(T + H):, 0]
    if not 0 <= onset < T:
        raise UsageError(f"--onset must be in [0, {T})")
    params = an.sample_params(np.random.default_rng(seed), T, cfg.anomaly.tail_fraction)
    params = an.AnomalyParams(params.A, params.B, params.C, params.sign, onset)
    pair = an.inject((values[:T], values[T:]), params, scale=cfg.anomaly.scale * float(stats.std[series_id][0]))
    original = np.concatenate([pair.original_input[:, 0], pair.original_target[:, 0]])
    augmented = np.concatenate([pair.augmented_input[:, 0], pair.augmented_target[:, 0]])
    return original, augmented - original, augmented, params


def write_svg(path: Path, original, anomaly, augmented, onset: int, width=720, height=360) -> None:
    """Three polylines on shared axes: original (grey), anomaly (blue dashed), augmented (red)."""
    n = len(original)
    allv = np.concatenate([original, anomaly, augmented])
    lo, hi = float(allv.min()), float(allv.max())
    hi = hi if hi > lo else lo + 1.0
    ml, mr, mt, mb = 50, 10, 10, 30

    def pts(v):
        xs = ml + np.arange(n) * (width - ml - mr) / max(n - 1, 1)
        ys = mt + (hi - np.asarray(v)) * (height - mt - mb) / (hi - lo)
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))

    zero_y = mt + hi * (height - mt - mb) / (hi - lo)
    onset_x = ml + onset * (width - ml - mr) / max(n - 1, 1)
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{zero_y:.2f}" x2="{width - mr}" y2="{zero_y:.2f}" stroke="#ccc"/>',
        f'<line x1="{onset_x:.2f}" y1="{mt}" x2="{onset_x:.2f}" y2="{height - mb}" stroke="#999" '
        'stroke-dasharray="2,3"/>',
        f'<text x="4" y="{mt + 10}" font-size="10">{hi:.1f}</text>',
        f'<text x="4" y="{height - mb}" font-size="10">{lo:.1f}</text>',
        f'<text x="{ml}" y="{height - 8}" font-size="10">t=0</text>',
        f'<text x="{width - mr - 30}" y="{height - 8}" font-size="10">t={n - 1}</text>',
        f'<polyline fill="none" stroke="grey" stroke-width="1.5" points="{pts(original)}"/>',
        f'<polyline fill="none" stroke="blue" stroke-dasharray="5,3" points="{pts(anomaly)}"/>',
        f'<polyline fill="none" stroke="red" stroke-width="1.5" points="{pts(augmented)}"/>',
        "</svg>",
    ]
    path.write_text("\n".join(svg) + "\n", encoding="utf-8")


def cmd_inject_preview(args) -> int:
    cfg = _config(args)
    out = _out(cfg)
    seed = 0 if args.seed is None else args.seed
    original, anomaly, augmented, params = preview_rows(cfg, args.series_id, args.onset, seed)
    stem = out / f"preview_{args.series_id}_onset{args.onset}"
    with open(stem.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "original", "anomaly", "augmented"))
        for t, row in enumerate(zip(original, anomaly, augmented)):
            w.writerow((t, *(repr(float(v)) for v in row)))
    if not args.no_svg:
        write_svg(stem.with_suffix(".svg"), original, anomaly, augmented, args.onset)
    print(f"A={params.A:.1f} B={params.B} C={params.C:.4f} sign={params.sign:+d} onset={args.onset}")
    print(f"wrote {stem.with_suffix('.csv')}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.regime is None:
        raise UsageError("train needs --regime")
    out = _out(cfg)
    seed = cfg.experiment.seeds[0] if args.seed is None else args.seed
    ws = Workspace.build(cfg)
    result, report = run_regime(ws, args.regime, seed, out)
    print(f"{args.regime} seed {seed}: best epoch {result.log.best_epoch}, val MAE {result.log.best_val_mae:.5f}, "
          f"ND {report.smape_nd:.3f}, AD {report.smape_ad:.3f}")
    return EXIT_OK


def _write_reports(out: Path, reports, agg) -> None:
    write_run_reports(reports, out / "runs.csv")
    (out / "report.csv").write_text(agg.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(agg.to_table(), encoding="utf-8")


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out(cfg)
    ws = Workspace.build(cfg)
    seeds = cfg.experiment.seeds if args.seed is None else (args.seed,)
    regimes = cfg.experiment.regimes if args.regime is None else (args.regime,)
    reports = []
    for regime in regimes:
        for seed in seeds:
            path = checkpoint_path(out, regime, seed)
            if not path.exists():
                log.info("no checkpoint for %s seed %d, skipping", regime, seed)
                continue
            params, meta = load_checkpoint(path)
            if meta.get("fingerprint") not in (None, ws.fp):
                log.warning("%s was trained with a different config (%s)", path, meta.get("fingerprint"))
            reports.append(ws.evaluate(params, regime, seed))
    if not reports:
        raise RuntimeError(f"no checkpoints found under {out / 'checkpoints'}")
    agg = aggregate(reports, ws.fp)
    _write_reports(out, reports, agg)
    print(agg.to_table(), end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg.experiment.seeds = (args.seed,)
    out = _out(cfg)
    result = bench(cfg, out, jobs=args.jobs)
    _write_reports(out, result.reports, result.aggregate)
    print(result.aggregate.to_table(), end="")
    for f in result.failures:
        print(f"FAILED: {f}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_RUNTIME


def cmd_report(args) -> int:
    cfg = _config(args)
    out = Path(cfg.experiment.out)
    runs = out / "runs.csv"
    if not runs.exists():
        raise RuntimeError(f"{runs} not found; run bench or eval first")
    reports = read_run_reports(runs)
    fps = {r.fingerprint for r in reports}
    agg = aggregate(reports, fps.pop() if len(fps) == 1 else fingerprint(sorted(fps)))
    (out / "report.txt").write_text(agg.to_table(), encoding="utf-8")
    (out / "report.csv").write_text(agg.to_csv(), encoding="utf-8")
    print(agg.to_table(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="weca", description="Weighted contrastive anomaly-aware forecasting experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat section.key=value config file (defaults used if omitted)")
        sp.add_argument("--out", help="output directory (overrides experiment.out)")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("gen", help="write the synthetic dataset as CSV")
    common(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("inject-preview", help="CSV/SVG of one window with an injected anomaly")
    common(sp)
    sp.add_argument("--series-id", required=True)
    sp.add_argument("--onset", type=int, required=True, help="injection index inside the input window")
    sp.add_argument("--no-svg", action="store_true")
    sp.set_defaults(func=cmd_inject_preview)

    sp = sub.add_parser("train", help="train one regime for one seed")
    common(sp)
    sp.add_argument("--regime", choices=REGIMES)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate saved checkpoints on ND/AD test sets")
    common(sp)
    sp.add_argument("--regime", choices=REGIMES)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="all regimes x seeds, then the comparison table")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="re-aggregate runs.csv into the comparison table")
    common(sp)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"weca: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, DataError, EvaluationError, TrainingError, ArithmeticError, OSError) as exc:
        print(f"weca: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
