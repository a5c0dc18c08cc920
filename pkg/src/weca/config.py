"""Experiment configuration: flat ``section.key=value`` text files.

Example::

    # comments and blank lines are ignored
    data.n_series=64
    train.learning_rate=0.001
    experiment.seeds=0,1,2,3,4
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, get_type_hints

from .anomaly import AnomalyConfig
from .datagen import SplitSpec
from .model import DecoderConfig, EncoderConfig
from .trainer import REGIMES, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    source: str = "synthetic"  # "synthetic" or "csv"
    csv_path: str = ""
    n_series: int = 64
    length: int = 730
    seed: int = 1
    noise_scale: float = 0.12
    T: int = 56
    H: int = 14
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20


@dataclass
class ModelSection:
    latent_dim: int = 32
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)


@dataclass
class AnomalySection:
    scale: float = 1.0
    sigma_w: float = 1.0
    tail_fraction: float = 0.25


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 15
    early_stop_patience: int = 3
    lam: float = 1.0
    p_aug: float = 0.5
    forecast_on_augmented: bool = True
    normalize_latents: bool = True
    from_checkpoint: bool = False
    max_batches_per_epoch: int = 200


@dataclass
class EvalSection:
    seed: int = 0


@dataclass
class ExperimentSection:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    regimes: tuple[str, ...] = ("NT", "FT", "CL-IL", "WECA")
    out: str = "runs"


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    anomaly: AnomalySection = field(default_factory=AnomalySection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    # ---- derived objects

    def encoder(self, channels: int = 1) -> EncoderConfig:
        m = self.model
        return EncoderConfig(channels, m.latent_dim, m.kernel_size, tuple(m.dilations))

    def decoder(self, channels: int = 1) -> DecoderConfig:
        return DecoderConfig(self.data.H, channels)

    def anomaly_config(self) -> AnomalyConfig:
        a = self.anomaly
        return AnomalyConfig(a.scale, a.sigma_w, a.tail_fraction)

    def split_spec(self) -> SplitSpec:
        d = self.data
        return SplitSpec(d.train_frac, d.val_frac, d.test_frac)

    def train_config(self, regime: str, seed: int) -> TrainConfig:
        return TrainConfig(regime=regime, seed=seed, **dataclasses.asdict(self.train))

    def fingerprint_parts(self) -> dict[str, Any]:
        """Everything that affects results (output location excluded)."""
        d = dataclasses.asdict(self)
        d["experiment"] = {k: v for k, v in d["experiment"].items() if k != "out"}
        return d

    def validate(self) -> None:
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.data.source!r}")
        if self.data.source == "csv":
            if not self.data.csv_path or not Path(self.data.csv_path).exists():
                raise ConfigError(f"data.csv_path does not exist: {self.data.csv_path!r}")
        for r in self.experiment.regimes:
            if r not in REGIMES:
                raise ConfigError(f"unknown regime {r!r}")
        if not self.experiment.seeds:
            raise ConfigError("experiment.seeds must not be empty")
        try:
            self.split_spec()
            self.encoder()
            self.anomaly_config()
            self.train_config(self.experiment.regimes[0], 0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # ---- text format

    def to_text(self) -> str:
        lines = []
        for sec in fields(self):
            obj = getattr(self, sec.name)
            for f in fields(obj):
                lines.append(f"{sec.name}.{f.name}={_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def set(self, dotted: str, raw: str) -> None:
        if "." not in dotted:
            raise ConfigError(f"key {dotted!r} is not of the form section.key")
        sec_name, key = dotted.split(".", 1)
        if sec_name not in {f.name for f in fields(self)}:
            raise ConfigError(f"unknown config section {sec_name!r}")
        sec = getattr(self, sec_name)
        hints = get_type_hints(type(sec))
        if key not in hints:
            raise ConfigError(f"unknown config key {dotted!r}")
        setattr(sec, key, _parse(hints[key], raw.strip(), dotted))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(tp, raw: str, key: str):
    try:
        if tp is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if tp == tuple[int, ...]:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if tp == tuple[str, ...]:
            return tuple(x.strip() for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{key}: unsupported type {tp}")


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        cfg.set(k.strip(), v)
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig() if path is None else parse_config(Path(path).read_text(encoding="utf-8"))
    cfg.validate()
    return cfg
