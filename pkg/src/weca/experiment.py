"""Regime x seed runs and the aggregated comparison table."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import ExperimentConfig
from .datagen import SeriesSet, generate_synthetic, load_csv
from .evaluation import AggregateReport, RunReport, TestSets, aggregate, build_test_sets, evaluate, fingerprint
from .model import ModelParams, load_checkpoint, save_checkpoint
from .trainer import PreparedData, TrainingError, TrainResult, prepare, train

log = logging.getLogger(__name__)


def load_series(cfg: ExperimentConfig) -> SeriesSet:
    d = cfg.data
    if d.source == "csv":
        return load_csv(d.csv_path)
    return generate_synthetic(d.n_series, d.length, d.seed, T=d.T, H=d.H, noise_scale=d.noise_scale)


@dataclass
class Workspace:
    """Data shared by every run of one experiment config."""

    cfg: ExperimentConfig
    data: PreparedData
    sets: TestSets
    fp: str

    @classmethod
    def build(cls, cfg: ExperimentConfig) -> "Workspace":
        data = prepare(load_series(cfg), cfg.data.T, cfg.data.H, cfg.split_spec())
        sets = build_test_sets(data.test, cfg.data.T, cfg.data.H, cfg.anomaly_config(), cfg.eval.seed)
        return cls(cfg, data, sets, fingerprint(cfg.fingerprint_parts()))

    @property
    def channels(self) -> int:
        return self.data.train.inputs.shape[-1]

    def train(self, regime: str, seed: int, init: ModelParams | None = None) -> TrainResult:
        return train(
            self.data,
            self.cfg.train_config(regime, seed),
            encoder=self.cfg.encoder(self.channels),
            decoder=self.cfg.decoder(self.channels),
            anomaly=self.cfg.anomaly_config(),
            init=init,
        )

    def evaluate(self, params: ModelParams, regime: str, seed: int) -> RunReport:
        return evaluate(params, self.sets, self.data.stats, regime, seed, self.fp)


def checkpoint_path(out: Path, regime: str, seed: int) -> Path:
    return out / "checkpoints" / f"{regime}_seed{seed}.ckpt"


def log_path(out: Path, regime: str, seed: int) -> Path:
    return out / "logs" / f"{regime}_seed{seed}.csv"


def run_regime(ws: Workspace, regime: str, seed: int, out: Path | None = None,
               nt_params: ModelParams | None = None) -> tuple[TrainResult, RunReport]:
    """Train + evaluate one (regime, seed); FT and from_checkpoint runs start from the NT checkpoint."""
    init = None
    if regime == "FT" or (ws.cfg.train.from_checkpoint and regime != "NT"):
        if nt_params is None and out is not None and checkpoint_path(out, "NT", seed).exists():
            nt_params, _ = load_checkpoint(checkpoint_path(out, "NT", seed))
        if nt_params is None:
            raise TrainingError(f"{regime} needs the NT checkpoint for seed {seed}; train NT first")
        init = nt_params
    result = ws.train(regime, seed, init)
    report = ws.evaluate(result.params, regime, seed)
    if out is not None:
        checkpoint_path(out, regime, seed).parent.mkdir(parents=True, exist_ok=True)
        log_path(out, regime, seed).parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(result.params, checkpoint_path(out, regime, seed),
                        {"regime": regime, "seed": str(seed), "fingerprint": ws.fp,
                         "best_epoch": str(result.log.best_epoch)})
        result.log.write_csv(log_path(out, regime, seed))
    return result, report


@dataclass
class SeedOutcome:
    seed: int
    reports: list[RunReport] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)


def run_seed(cfg: ExperimentConfig, seed: int, out: Path | None = None, ws: Workspace | None = None) -> SeedOutcome:
    ws = ws or Workspace.build(cfg)
    outcome = SeedOutcome(seed)
    regimes = list(cfg.experiment.regimes)
    # NT first: FT (and checkpoint-initialised runs) depend on it
    if "NT" in regimes:
        regimes.remove("NT")
        regimes.insert(0, "NT")
    nt_params = None
    for regime in regimes:
        try:
            result, report = run_regime(ws, regime, seed, out, nt_params)
        except (TrainingError, ArithmeticError) as exc:
            log.error("run %s seed %d failed: %s", regime, seed, exc)
            outcome.failures.append(f"{regime} seed {seed}: {exc}")
            continue
        if regime == "NT":
            nt_params = result.params
        outcome.reports.append(report)
        log.info("%s seed %d: ND %.3f AD %.3f", regime, seed, report.smape_nd, report.smape_ad)
    return outcome


def _run_seed_job(args):
    cfg, seed, out = args
    return run_seed(cfg, seed, out)


@dataclass
class BenchResult:
    aggregate: AggregateReport
    reports: list[RunReport]
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def bench(cfg: ExperimentConfig, out: Path | None = None, jobs: int = 1) -> BenchResult:
    """Every configured regime for every seed, then the aggregate table."""
    seeds = list(cfg.experiment.seeds)
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_seed_job, [(cfg, s, out) for s in seeds]))
    else:
        ws = Workspace.build(cfg)
        outcomes = [run_seed(cfg, s, out, ws) for s in seeds]
    reports = [r for o in outcomes for r in o.reports]
    failures = [f for o in outcomes for f in o.failures]
    fp = fingerprint(cfg.fingerprint_parts())
    return BenchResult(aggregate(reports, fp, complete=not failures), reports, failures)
