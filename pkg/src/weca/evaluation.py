"""SMAPE, paired normal/anomalous test sets, per-run and aggregate reports.

SMAPE convention used throughout (0 to 200 %)::

    100/(H*C) * sum 2|y_hat - y| / max(|y| + |y_hat|, 1e-8)
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anomaly import AnomalyConfig, inject_arrays, sample_param_array
from .datagen import NormStats, SeriesSet, WindowSet, make_windows
from .model import ModelParams, predict

SMAPE_EPS = 1e-8
SMAPE_CONVENTION = "SMAPE % = 100/(H*C) * sum 2|yhat-y| / max(|y|+|yhat|, 1e-8); range [0, 200]"
EVAL_STREAM = 104729


class EvaluationError(RuntimeError):
    pass


def smape(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"smape: shape mismatch {y.shape} vs {y_hat.shape}")
    return float(np.mean(_smape_terms(y, y_hat)))


def _smape_terms(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    # ratio first: |a - b| <= |a| + |b| holds after rounding, so the range stays [0, 200]
    return 200.0 * (np.abs(y_hat - y) / np.maximum(np.abs(y) + np.abs(y_hat), SMAPE_EPS))


def smape_windows(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Per-window SMAPE for stacked (N, H, C) arrays."""
    return _smape_terms(y, y_hat).mean(axis=(1, 2))


# --------------------------------------------------------------------------
# test sets


@dataclass
class TestSets:
    __test__ = False  # not a pytest class

    nd: WindowSet
    ad: WindowSet
    injection_start: np.ndarray


def build_test_sets(test: SeriesSet, T: int, H: int, anomaly: AnomalyConfig = AnomalyConfig(),
                    seed: int = 0) -> TestSets:
    """ND: every test window as is. AD: the same windows with one injected anomaly each."""
    nd = make_windows(test, T, H)
    if len(nd) == 0:
        raise EvaluationError("test partition yields no windows")
    rng = np.random.default_rng([seed, EVAL_STREAM])
    draws = sample_param_array(rng, len(nd), T, anomaly.tail_fraction)
    xa, ya = inject_arrays(nd.inputs, nd.targets, draws, anomaly.scale)
    ad = WindowSet(xa, ya, nd.series_index, nd.origins, nd.ids, nd.skipped)
    return TestSets(nd, ad, draws.onset)


# --------------------------------------------------------------------------
# reports


def fingerprint(*parts) -> str:
    """Stable short hash of config-like objects (dataclasses, dicts, scalars)."""
    def canon(o):
        if hasattr(o, "__dataclass_fields__"):
            return {k: canon(getattr(o, k)) for k in o.__dataclass_fields__}
        if isinstance(o, dict):
            return {str(k): canon(v) for k, v in sorted(o.items())}
        if isinstance(o, (list, tuple)):
            return [canon(v) for v in o]
        if isinstance(o, float):
            return repr(o)
        return o

    blob = json.dumps([canon(p) for p in parts], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunReport:
    regime: str
    seed: int
    smape_nd: float
    smape_ad: float
    per_series_nd: dict[str, float] = field(default_factory=dict)
    per_series_ad: dict[str, float] = field(default_factory=dict)
    fingerprint: str = ""


def _series_average(per_window: np.ndarray, windows: WindowSet) -> tuple[float, dict[str, float]]:
    per_series = {}
    for k in np.unique(windows.series_index):
        per_series[windows.ids[k]] = float(per_window[windows.series_index == k].mean())
    return float(np.mean(list(per_series.values()))), per_series


def _denorm(arr: np.ndarray, windows: WindowSet, stats: NormStats) -> np.ndarray:
    ids = [windows.ids[k] for k in windows.series_index]
    mean = np.stack([stats.mean[i] for i in ids])[:, None, :]
    std = np.stack([stats.std[i] for i in ids])[:, None, :]
    return arr * std + mean


def evaluate_forecasts(pred_nd: np.ndarray, pred_ad: np.ndarray, sets: TestSets, stats: NormStats,
                       regime: str = "", seed: int = 0, fp: str = "") -> RunReport:
    """SMAPE in original units, averaged within each series and then across series."""
    for name, pred in (("ND", pred_nd), ("AD", pred_ad)):
        bad = ~np.all(np.isfinite(pred), axis=(1, 2))
        if bad.any():
            k = int(np.argmax(bad))
            w = sets.nd
            raise EvaluationError(
                f"non-finite forecast on {name} window {k} (series {w.ids[w.series_index[k]]}, origin {w.origins[k]})"
            )
    nd = smape_windows(_denorm(sets.nd.targets, sets.nd, stats), _denorm(pred_nd, sets.nd, stats))
    ad = smape_windows(_denorm(sets.ad.targets, sets.ad, stats), _denorm(pred_ad, sets.ad, stats))
    s_nd, ps_nd = _series_average(nd, sets.nd)
    s_ad, ps_ad = _series_average(ad, sets.ad)
    return RunReport(regime, seed, s_nd, s_ad, ps_nd, ps_ad, fp)


def evaluate(params: ModelParams, sets: TestSets, stats: NormStats, regime: str = "", seed: int = 0,
             fp: str = "") -> RunReport:
    return evaluate_forecasts(predict(sets.nd.inputs, params), predict(sets.ad.inputs, params), sets, stats,
                              regime, seed, fp)


@dataclass
class RegimeSummary:
    regime: str
    n: int
    nd_mean: float
    nd_std: float
    ad_mean: float
    ad_std: float
    nd_delta: float
    ad_delta: float


@dataclass
class AggregateReport:
    rows: list[RegimeSummary]
    fingerprint: str = ""
    complete: bool = True

    def row(self, regime: str) -> RegimeSummary:
        for r in self.rows:
            if r.regime == regime:
                return r
        raise KeyError(regime)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("regime", "n", "nd_mean", "nd_std", "nd_delta", "ad_mean", "ad_std", "ad_delta"))
        for r in self.rows:
            w.writerow((r.regime, r.n, *(f"{v:.6f}" for v in (r.nd_mean, r.nd_std, r.nd_delta, r.ad_mean,
                                                              r.ad_std, r.ad_delta))))
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [
            f"# {SMAPE_CONVENTION}",
            f"# config fingerprint: {self.fingerprint}" + ("" if self.complete else "  [INCOMPLETE]"),
            f"{'Method':<10} {'ND SMAPE':>16} {'ND delta':>9} {'AD SMAPE':>16} {'AD delta':>9}",
        ]
        for r in self.rows:
            nd = f"{r.nd_mean:.2f}" + (f" +- {r.nd_std:.2f}" if r.n > 1 else " (n=1)")
            ad = f"{r.ad_mean:.2f}" + (f" +- {r.ad_std:.2f}" if r.n > 1 else " (n=1)")
            nd_d = "--" if r.regime == "NT" else f"{r.nd_delta:+.2f}"
            ad_d = "--" if r.regime == "NT" else f"{r.ad_delta:+.2f}"
            lines.append(f"{r.regime:<10} {nd:>16} {nd_d:>9} {ad:>16} {ad_d:>9}")
        return "\n".join(lines) + "\n"


def _mean_std(vals: list[float]) -> tuple[float, float]:
    a = np.sort(np.asarray(vals, dtype=np.float64))
    mean = float(math.fsum(a) / len(a))
    std = float(np.sqrt(math.fsum((a - mean) ** 2) / (len(a) - 1))) if len(a) > 1 else 0.0
    return mean, std


def aggregate(reports: list[RunReport], fingerprint: str = "", complete: bool = True) -> AggregateReport:
    """Mean and sample std per regime, deltas against NT. Row order: first appearance."""
    regimes: dict[str, list[RunReport]] = {}
    for r in reports:
        regimes.setdefault(r.regime, []).append(r)
    if "NT" not in regimes:
        raise EvaluationError("aggregate needs at least one NT report")
    stats = {k: (_mean_std([r.smape_nd for r in v]), _mean_std([r.smape_ad for r in v])) for k, v in regimes.items()}
    (nt_nd, _), (nt_ad, _) = stats["NT"]
    order = sorted(regimes, key=lambda k: (k != "NT", _REGIME_ORDER.get(k, 99), k))
    rows = []
    for k in order:
        (nd_m, nd_s), (ad_m, ad_s) = stats[k]
        rows.append(RegimeSummary(k, len(regimes[k]), nd_m, nd_s, ad_m, ad_s, nd_m - nt_nd, ad_m - nt_ad))
    return AggregateReport(rows, fingerprint, complete)


_REGIME_ORDER = {"NT": 0, "FT": 1, "CL-IL": 2, "WECA": 3, "ABL-ILTL": 4, "ABL-IL": 5, "ABL-TL": 6}


def write_run_reports(reports: list[RunReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("regime", "seed", "smape_nd", "smape_ad", "fingerprint"))
        for r in reports:
            w.writerow((r.regime, r.seed, repr(r.smape_nd), repr(r.smape_ad), r.fingerprint))


def read_run_reports(path: str | Path) -> list[RunReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [RunReport(row["regime"], int(row["seed"]), float(row["smape_nd"]), float(row["smape_ad"]),
                          fingerprint=row["fingerprint"]) for row in csv.DictReader(fh)]
