"""Adam, early stopping and the training regimes.

Regimes
-------
NT        forecast MAE on normal windows.
FT        start from an NT checkpoint, forecast MAE on augmented windows only.
CL-IL     MAE + lambda * instance contrast (all weights 1).
WECA      MAE + lambda * weighted instance contrast.
ABL-IL, ABL-TL, ABL-ILTL
          ablations with instance, temporal, or summed contrast.

In the contrastive regimes a fraction ``p_aug`` of windows is augmented each
epoch; the rest pair a window with itself. With ``forecast_on_augmented`` the
forecast term averages the MAE of both views.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .anomaly import AnomalyConfig, ParamDraws, compute_weights, inject_arrays, sample_param_array
from .datagen import NormStats, SeriesSet, SplitSpec, WindowSet, epoch_order, make_windows, normalize, split
from .losses import BatchLatents, forecast_mae, instance_loss, instance_temporal_loss, temporal_loss, weca_loss
from .model import DecoderConfig, EncoderConfig, ModelParams, decode, encode, init_params, predict

log = logging.getLogger(__name__)

REGIMES = ("NT", "FT", "CL-IL", "WECA", "ABL-IL", "ABL-TL", "ABL-ILTL")
CONTRASTIVE_REGIMES = {
    "CL-IL": instance_loss,
    "WECA": weca_loss,
    "ABL-IL": instance_loss,
    "ABL-TL": temporal_loss,
    "ABL-ILTL": instance_temporal_loss,
}
AUG_STREAM = 7919  # keeps augmentation draws independent of the shuffle stream


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, msg: str, last_good: ModelParams | None, epoch: int):
        super().__init__(msg)
        self.last_good = last_good
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "NT"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    lam: float = 1.0
    seed: int = 0
    p_aug: float = 0.5
    forecast_on_augmented: bool = True
    normalize_latents: bool = True
    from_checkpoint: bool = False
    max_batches_per_epoch: int = 0  # 0: use every window each epoch

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {', '.join(REGIMES)}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if not 0.0 <= self.p_aug <= 1.0:
            raise ValueError("p_aug must be in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: ModelParams, state: AdamState, lr: float, grads: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update. Gradients default to each tensor's ``.grad``."""
    if grads is None:
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------
# data


@dataclass
class PreparedData:
    """Normalised windows for training plus what evaluation needs."""

    train: WindowSet
    val: WindowSet
    test: SeriesSet  # normalised test partition
    stats: NormStats
    T: int
    H: int


def prepare(series_set: SeriesSet, T: int, H: int, spec: SplitSpec = SplitSpec()) -> PreparedData:
    train_s, val_s, test_s = split(series_set, spec, T, H)
    stats = NormStats.from_train(train_s)
    return PreparedData(
        make_windows(normalize(stats, train_s), T, H),
        make_windows(normalize(stats, val_s), T, H),
        normalize(stats, test_s),
        stats,
        T,
        H,
    )


# --------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    lr: float
    wall_ms: float


@dataclass
class TrainLog:
    regime: str
    epochs: list[EpochRecord] = field(default_factory=list)
    batch_losses: list[list[float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("inf")
    stopped_early: bool = False

    @property
    def losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "train_loss", "val_mae", "lr", "wall_ms"))
            for e in self.epochs:
                w.writerow((e.epoch, repr(e.train_loss), repr(e.val_mae), repr(e.lr), f"{e.wall_ms:.1f}"))


@dataclass
class TrainResult:
    params: ModelParams
    log: TrainLog


def validation_mae(params: ModelParams, windows: WindowSet) -> float:
    """Mean per-window forecast MAE on (normal) validation windows."""
    if len(windows) == 0:
        return float("nan")
    pred = predict(windows.inputs, params)
    per_window = np.abs(pred - windows.targets).sum(axis=(1, 2)) / windows.targets.shape[1]
    return float(per_window.mean())


def _take(draws: ParamDraws, idx: np.ndarray) -> ParamDraws:
    return ParamDraws(draws.A[idx], draws.B[idx], draws.C[idx], draws.sign[idx], draws.onset[idx])


class _EpochAugmenter:
    """Per-epoch anomaly draws for every training window, indexed by window id."""

    def __init__(self, n: int, T: int, seed: int, epoch: int, p_aug: float, anomaly: AnomalyConfig):
        rng = np.random.default_rng([seed, epoch, AUG_STREAM])
        self.draws = sample_param_array(rng, n, T, anomaly.tail_fraction)
        self.mask = rng.random(n) < p_aug
        self.scale = anomaly.scale

    def __call__(self, idx: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xa, ya = inject_arrays(x, y, _take(self.draws, idx), self.scale)
        m = self.mask[idx][:, None, None]
        return np.where(m, xa, x), np.where(m, ya, y)


def batch_loss(params: ModelParams, cfg: TrainConfig, x: np.ndarray, y: np.ndarray,
               xa: np.ndarray | None, ya: np.ndarray | None, weights: np.ndarray | None) -> dc.Tensor:
    """Regime objective for one batch (must run inside an active Tape)."""
    if cfg.regime == "NT":
        return forecast_mae(decode(encode(dc.tensor(x), params), params), y)
    if cfg.regime == "FT":
        return forecast_mae(decode(encode(dc.tensor(xa), params), params), ya)
    z = encode(dc.tensor(x), params)
    zt = encode(dc.tensor(xa), params)
    fc = forecast_mae(decode(z, params), y)
    if cfg.forecast_on_augmented:
        fc = dc.mul(dc.add(fc, forecast_mae(decode(zt, params), ya)), 0.5)
    lat = BatchLatents(z, zt, weights)
    contrast = CONTRASTIVE_REGIMES[cfg.regime](lat, cfg.normalize_latents)
    return dc.add(fc, dc.mul(contrast, cfg.lam))


def train(
    data: PreparedData,
    cfg: TrainConfig,
    *,
    encoder: EncoderConfig | None = None,
    decoder: DecoderConfig | None = None,
    anomaly: AnomalyConfig = AnomalyConfig(),
    init: ModelParams | None = None,
) -> TrainResult:
    """Train one regime; returns the best-validation parameters and the log."""
    C = data.train.inputs.shape[-1]
    encoder = encoder or EncoderConfig(input_channels=C)
    decoder = decoder or DecoderConfig(horizon=data.H, output_channels=C)
    if cfg.regime == "FT" and init is None:
        raise TrainingError("FT regime needs an NT checkpoint to start from")
    if init is not None and (cfg.regime == "FT" or cfg.from_checkpoint):
        params = init.copy()
    else:
        params = init_params(encoder, decoder, cfg.seed)
    if len(data.train) == 0:
        raise TrainingError("no training windows")

    state = AdamState()
    tlog = TrainLog(cfg.regime)
    best = params.copy()
    since_best = 0
    augment = cfg.regime != "NT"
    p_aug = 1.0 if cfg.regime == "FT" else cfg.p_aug

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        n = len(data.train)
        order = epoch_order(n, cfg.seed, epoch)
        aug = _EpochAugmenter(n, data.T, cfg.seed, epoch, p_aug, anomaly) if augment else None
        losses: list[float] = []
        for b, k in enumerate(range(0, n, cfg.batch_size)):
            if cfg.max_batches_per_epoch and b >= cfg.max_batches_per_epoch:
                break
            idx = order[k : k + cfg.batch_size]
            x, y = data.train.inputs[idx], data.train.targets[idx]
            xa = ya = w = None
            if aug is not None:
                xa, ya = aug(idx, x, y)
                if cfg.regime == "WECA":
                    w = compute_weights(x, xa, anomaly.sigma_w)
            params.zero_grad()
            try:
                with dc.Tape() as tape:
                    loss = batch_loss(params, cfg, x, y, xa, ya, w)
                tape.backward(loss)
                adam_step(params, state, cfg.learning_rate)
            except (dc.NumericOverflowError, TrainingError) as exc:
                raise TrainingDiverged(
                    f"{cfg.regime} diverged at epoch {epoch}, batch {b}: {exc}; last good checkpoint is epoch "
                    f"{tlog.best_epoch}",
                    best,
                    epoch,
                ) from exc
            losses.append(loss.item())
        val = validation_mae(params, data.val)
        rec = EpochRecord(epoch, float(np.mean(losses)), val, cfg.learning_rate, (time.perf_counter() - t0) * 1e3)
        tlog.epochs.append(rec)
        tlog.batch_losses.append(losses)
        log.debug("%s epoch %d loss %.5f val %.5f (%.0f ms)", cfg.regime, epoch, rec.train_loss, val, rec.wall_ms)
        if val < tlog.best_val_mae:
            tlog.best_val_mae = val
            tlog.best_epoch = epoch
            best = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                tlog.stopped_early = True
                break
    log.info("%s seed %d: best epoch %d/%d, val MAE %.5f", cfg.regime, cfg.seed, tlog.best_epoch,
             len(tlog.epochs), tlog.best_val_mae)
    return TrainResult(best, tlog)
