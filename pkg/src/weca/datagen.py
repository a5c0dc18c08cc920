"""Synthetic ATM-like daily series, CSV I/O, chronological splits and windowing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_T = 56
DEFAULT_H = 14
STD_FLOOR = 1e-8
CSV_HEADER = ("series_id", "date", "value")


class DataError(ValueError):
    pass


@dataclass
class Series:
    id: str
    values: np.ndarray  # (L, C)
    start_date: date

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DataError(f"series {self.id}: values must be 1-D or 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError(f"series {self.id}: non-finite values")
        self.values = v

    def __len__(self) -> int:
        return self.values.shape[0]

    def dates(self) -> list[date]:
        return [self.start_date + timedelta(days=k) for k in range(len(self))]


@dataclass
class SeriesSet:
    series: list[Series]
    frequency: str = "D"

    def __post_init__(self):
        chans = {s.values.shape[1] for s in self.series}
        if len(chans) > 1:
            raise DataError(f"series disagree on channel count: {sorted(chans)}")

    @property
    def channels(self) -> int:
        return self.series[0].values.shape[1] if self.series else 0

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.series]

    def __len__(self) -> int:
        return len(self.series)

    def __getitem__(self, series_id: str) -> Series:
        for s in self.series:
            if s.id == series_id:
                return s
        raise KeyError(series_id)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"split fractions must be non-negative and sum to 1, got {fr}")

    def sizes(self, length: int) -> tuple[int, int, int]:
        """Partition sizes for one series.

        Boundaries are the ceilings of the cumulative shares, so every
        partition is within one sample of its share and rounding surplus
        lands in the earlier partition (train first).
        """
        b1 = math.ceil(self.train_frac * length - 1e-9)
        b2 = max(b1, math.ceil((self.train_frac + self.val_frac) * length - 1e-9))
        b2 = min(b2, length)
        return b1, b2 - b1, length - b2


# --------------------------------------------------------------------------
# generation


def generate_synthetic(
    n_series: int,
    length: int,
    seed: int,
    *,
    T: int = DEFAULT_T,
    H: int = DEFAULT_H,
    noise_scale: float = 0.12,
    start_date: date = date(2022, 1, 1),
) -> SeriesSet:
    """ATM-like daily withdrawal counts.

    Each series is ``level + slope*t + weekly_profile[t % 7] + noise``, clipped
    at zero. ``noise_scale`` is the noise std as a fraction of the level.
    """
    if n_series < 1:
        raise DataError("n_series must be >= 1")
    if length < 2 * (T + H):
        raise DataError(f"length {length} too short; need at least 2*(T+H) = {2 * (T + H)}")
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    out = []
    for k in range(n_series):
        level = rng.uniform(80.0, 400.0)
        # weekday shape: busier towards the weekend, per-series jitter
        base_shape = np.array([-0.10, -0.12, -0.05, 0.0, 0.15, 0.22, -0.10])
        profile = level * (base_shape + rng.normal(0.0, 0.06, 7))
        profile -= profile.mean()
        phase = int(rng.integers(7))
        slope = level * rng.uniform(-0.15, 0.25) / length
        noise = rng.normal(0.0, noise_scale * level, length)
        values = level + slope * t + profile[(t + phase) % 7] + noise
        out.append(Series(f"atm_{k:04d}", np.maximum(values, 0.0), start_date))
    return SeriesSet(out)


# --------------------------------------------------------------------------
# csv


def write_csv(series_set: SeriesSet, path: str | Path) -> int:
    """Write the ``series_id,date,value`` format; returns the number of data rows."""
    if series_set.channels != 1:
        raise DataError("CSV export supports univariate series only")
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in series_set.series:
            for d, v in zip(s.dates(), s.values[:, 0]):
                w.writerow((s.id, d.isoformat(), repr(float(v))))
                rows += 1
    return rows


def load_csv(path: str | Path) -> SeriesSet:
    by_id: dict[str, list[tuple[date, float]]] = {}
    seen: set[tuple[str, date]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}: row {rowno}: expected 3 fields, got {len(row)}")
            sid, ds, vs = (c.strip() for c in row)
            try:
                d = date.fromisoformat(ds)
            except ValueError:
                raise DataError(f"{path}: row {rowno}: bad date {ds!r}") from None
            try:
                v = float(vs)
            except ValueError:
                raise DataError(f"{path}: row {rowno}: non-numeric value {vs!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {rowno}: non-finite value {vs!r}")
            if (sid, d) in seen:
                raise DataError(f"{path}: row {rowno}: duplicate (series_id, date) = ({sid}, {ds})")
            seen.add((sid, d))
            rows = by_id.setdefault(sid, [])
            if rows:
                prev = rows[-1][0]
                if d < prev:
                    raise DataError(f"{path}: row {rowno}: dates for {sid} are not increasing ({ds} after {prev})")
                if (d - prev).days != 1:
                    raise DataError(f"{path}: row {rowno}: missing dates for {sid} between {prev} and {ds}")
            rows.append((d, v))
    if not by_id:
        raise DataError(f"{path}: no data rows")
    return SeriesSet([Series(sid, np.array([v for _, v in rows]), rows[0][0]) for sid, rows in by_id.items()])


# --------------------------------------------------------------------------
# splitting and normalisation


def split(
    series_set: SeriesSet, spec: SplitSpec = SplitSpec(), T: int = DEFAULT_T, H: int = DEFAULT_H
) -> tuple[SeriesSet, SeriesSet, SeriesSet]:
    """Chronological per-series train/val/test partitions."""
    parts: tuple[list, list, list] = ([], [], [])
    for s in series_set.series:
        sizes = spec.sizes(len(s))
        start = 0
        for name, n, bucket in zip(("train", "val", "test"), sizes, parts):
            if n < T + H:
                raise DataError(f"series {s.id}: {name} partition has {n} samples, needs at least T+H = {T + H}")
            bucket.append(Series(s.id, s.values[start : start + n], s.start_date + timedelta(days=start)))
            start += n
    return tuple(SeriesSet(p, series_set.frequency) for p in parts)  # type: ignore[return-value]


@dataclass
class NormStats:
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]

    @classmethod
    def from_train(cls, train: SeriesSet) -> "NormStats":
        if not train.series or any(len(s) == 0 for s in train.series):
            raise DataError("cannot compute normalisation stats from an empty train partition")
        mean = {s.id: s.values.mean(axis=0) for s in train.series}
        std = {s.id: np.maximum(s.values.std(axis=0), STD_FLOOR) for s in train.series}
        return cls(mean, std)


def normalize(stats: NormStats, series_set: SeriesSet) -> SeriesSet:
    return SeriesSet(
        [Series(s.id, (s.values - stats.mean[s.id]) / stats.std[s.id], s.start_date) for s in series_set.series],
        series_set.frequency,
    )


def denormalize(stats: NormStats, series_set: SeriesSet) -> SeriesSet:
    return SeriesSet(
        [Series(s.id, s.values * stats.std[s.id] + stats.mean[s.id], s.start_date) for s in series_set.series],
        series_set.frequency,
    )


# --------------------------------------------------------------------------
# windows


@dataclass
class WindowBatch:
    inputs: np.ndarray  # (B, T, C)
    targets: np.ndarray  # (B, H, C)
    series_ids: list[str]
    origins: np.ndarray  # index of inputs[:, 0] in the source series


@dataclass
class WindowSet:
    """Every stride-1 window of a SeriesSet, stacked."""

    inputs: np.ndarray
    targets: np.ndarray
    series_index: np.ndarray
    origins: np.ndarray
    ids: list[str]
    skipped: int = 0

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def batch(self, idx: np.ndarray) -> WindowBatch:
        return WindowBatch(
            self.inputs[idx], self.targets[idx], [self.ids[k] for k in self.series_index[idx]], self.origins[idx]
        )


def make_windows(series_set: SeriesSet, T: int, H: int) -> WindowSet:
    if T < 1 or H < 1:
        raise DataError("T and H must be >= 1")
    C = max(series_set.channels, 1)
    xs, ys, sidx, origins = [], [], [], []
    skipped = 0
    for k, s in enumerate(series_set.series):
        n = len(s) - T - H + 1
        if n < 1:
            skipped += 1
            continue
        win = np.lib.stride_tricks.sliding_window_view(s.values, T + H, axis=0)  # (n, C, T+H)
        win = np.ascontiguousarray(np.swapaxes(win, 1, 2))
        xs.append(win[:, :T])
        ys.append(win[:, T:])
        sidx.append(np.full(n, k))
        origins.append(np.arange(n))
    if skipped:
        log.warning("skipped %d series shorter than T+H=%d", skipped, T + H)
    if not xs:
        return WindowSet(np.zeros((0, T, C)), np.zeros((0, H, C)), np.zeros(0, int), np.zeros(0, int),
                         series_set.ids, skipped)
    return WindowSet(
        np.concatenate(xs), np.concatenate(ys), np.concatenate(sidx), np.concatenate(origins), series_set.ids, skipped
    )


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


@dataclass
class BatchStream:
    """Shuffled stride-1 windows for one epoch; ``skipped`` counts too-short series."""

    windows: WindowSet
    batch_size: int
    seed: int
    epoch: int = 0
    skipped: int = field(init=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        self.skipped = self.windows.skipped

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    def __len__(self) -> int:
        return -(-self.n_windows // self.batch_size)

    def index_batches(self) -> Iterator[np.ndarray]:
        order = epoch_order(self.n_windows, self.seed, self.epoch)
        for k in range(0, len(order), self.batch_size):
            yield order[k : k + self.batch_size]

    def __iter__(self) -> Iterator[WindowBatch]:
        for idx in self.index_batches():
            yield self.windows.batch(idx)


def make_batches(series_set: SeriesSet, T: int, H: int, batch_size: int, seed: int, epoch: int = 0) -> BatchStream:
    return BatchStream(make_windows(series_set, T, H), batch_size, seed, epoch)
