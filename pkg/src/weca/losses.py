"""Weighted instance contrast (WECA), its unweighted and temporal variants, and forecast losses.

For latents z, z~ of shape (B, T', D) and timestep t::

    A[i,t] = exp(z[i,t] . z~[i,t])
    N[i,t] = sum_j exp(z[i,t] . z~[j,t]) + sum_{j != i} exp(z[i,t] . z[j,t])
    loss   = mean_{i,t}  -w[i,t] * log(A[i,t] / N[i,t])

Everything is evaluated in log space. The positive term is part of the
first sum of N, so each per-(i,t) term is non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

OVERFLOW_LIMIT = 700.0


class LatentOverflowError(dc.NumericOverflowError):
    def __init__(self, max_logit: float):
        super().__init__(
            "contrastive similarity",
            f"dot product {max_logit:.1f} exceeds {OVERFLOW_LIMIT:g}; enable normalize_latents",
        )


@dataclass
class BatchLatents:
    z: Tensor  # (B, T', D) original view
    z_tilde: Tensor  # (B, T', D) augmented view
    weights: np.ndarray | None = None  # (B, T') in [0, 1]; None means all ones

    def __post_init__(self):
        if self.z.shape != self.z_tilde.shape or self.z.data.ndim != 3:
            raise dc.ShapeError("BatchLatents", self.z.shape, self.z_tilde.shape, detail="expected matching (B, T', D)")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != self.z.shape[:2]:
                raise dc.ShapeError("BatchLatents", w.shape, self.z.shape[:2], detail="weights must be (B, T')")
            if np.any(w < 0) or np.any(w > 1):
                raise ValueError("weights must lie in [0, 1]")
            self.weights = w

    @property
    def batch(self) -> int:
        return self.z.shape[0]

    @property
    def steps(self) -> int:
        return self.z.shape[1]

    def unit_weights(self) -> "BatchLatents":
        return BatchLatents(self.z, self.z_tilde, None)


def _views(lat: BatchLatents, normalize: bool) -> tuple[Tensor, Tensor]:
    if normalize:
        return dc.l2_normalize_rows(lat.z), dc.l2_normalize_rows(lat.z_tilde)
    return lat.z, lat.z_tilde


def _check_overflow(*logits: Tensor) -> None:
    m = max(float(np.max(np.abs(l.data))) for l in logits)
    if m > OVERFLOW_LIMIT:
        raise LatentOverflowError(m)


def _diag(sim: Tensor) -> Tensor:
    """Diagonal of the trailing square block, kept on the tape by masked summation."""
    n = sim.shape[-1]
    eye = np.broadcast_to(np.eye(n), sim.shape)
    return dc.sum(dc.mul(sim, dc.tensor(eye)), axis=-1)


def _instance_terms(lat: BatchLatents, normalize: bool) -> tuple[Tensor, Tensor]:
    """(log A, log N), both (B, T')."""
    z, zt = _views(lat, normalize)
    B = lat.batch
    zT = dc.transpose(z, (1, 0, 2))  # (T', B, D)
    cross = dc.matmul(zT, dc.transpose(zt, (1, 2, 0)))  # [t, i, j] = z_it . z~_jt
    self_ = dc.matmul(zT, dc.transpose(z, (1, 2, 0)))  # [t, i, j] = z_it . z_jt
    if not normalize:
        _check_overflow(cross, self_)
    logits = dc.concat([cross, self_], axis=-1)
    mask = np.broadcast_to(np.concatenate([np.ones((B, B), bool), ~np.eye(B, dtype=bool)], axis=1), logits.shape)
    log_n = dc.transpose(dc.logsumexp_rows(logits, mask), (1, 0))
    log_a = dc.transpose(_diag(cross), (1, 0))
    return log_a, log_n


def _temporal_terms(lat: BatchLatents, normalize: bool) -> tuple[Tensor, Tensor]:
    z, zt = _views(lat, normalize)
    T = lat.steps
    cross = dc.matmul(z, dc.transpose(zt, (0, 2, 1)))  # [i, t, s] = z_it . z~_is
    self_ = dc.matmul(z, dc.transpose(z, (0, 2, 1)))
    if not normalize:
        _check_overflow(cross, self_)
    logits = dc.concat([cross, self_], axis=-1)
    mask = np.broadcast_to(np.concatenate([np.ones((T, T), bool), ~np.eye(T, dtype=bool)], axis=1), logits.shape)
    return _diag(cross), dc.logsumexp_rows(logits, mask)


def positive_similarity(lat: BatchLatents, normalize: bool = False) -> Tensor:
    """A[i,t] = exp(z[i,t] . z~[i,t]), shape (B, T')."""
    z, zt = _views(lat, normalize)
    dots = dc.dot_rows(z, zt)
    if not normalize:
        _check_overflow(dots)
    return dc.exp(dots)


def negative_aggregate(lat: BatchLatents, normalize: bool = False) -> Tensor:
    """N[i,t] including the j = i cross term, shape (B, T')."""
    _, log_n = _instance_terms(lat, normalize)
    return dc.exp(log_n)


def _weighted_mean(terms: Tensor, weights: np.ndarray | None) -> Tensor:
    if weights is not None:
        terms = dc.mul(terms, dc.tensor(weights))
    return dc.mean(terms)


def weca_loss(lat: BatchLatents, normalize: bool = True) -> Tensor:
    """Weighted InfoNCE averaged over B*T'. Weights are constants (no gradient)."""
    log_a, log_n = _instance_terms(lat, normalize)
    return _weighted_mean(dc.sub(log_n, log_a), lat.weights)


def instance_loss(lat: BatchLatents, normalize: bool = True) -> Tensor:
    return weca_loss(lat.unit_weights(), normalize)


def temporal_loss(lat: BatchLatents, normalize: bool = True) -> Tensor:
    """Same construction along time: negatives are the instance's other timesteps in both views."""
    if lat.steps < 2:
        raise ValueError("temporal_loss needs T' >= 2 (no temporal negatives otherwise)")
    log_a, log_n = _temporal_terms(lat, normalize)
    return dc.mean(dc.sub(log_n, log_a))


def instance_temporal_loss(lat: BatchLatents, normalize: bool = True) -> Tensor:
    """IL + TL, unweighted sum."""
    return dc.add(instance_loss(lat, normalize), temporal_loss(lat, normalize))


def forecast_mae(y_hat: Tensor, y) -> Tensor:
    """(1/H) sum_t ||y_t - y_hat_t||_1; for (B, H, C) input the mean over the batch."""
    y = y if isinstance(y, Tensor) else dc.tensor(y)
    if y_hat.shape != y.shape:
        raise dc.ShapeError("forecast_mae", y_hat.shape, y.shape)
    if y_hat.data.ndim not in (2, 3):
        raise dc.ShapeError("forecast_mae", y_hat.shape, detail="expected (H, C) or (B, H, C)")
    H = y_hat.shape[-2]
    n = H * (y_hat.shape[0] if y_hat.data.ndim == 3 else 1)
    return dc.mul(dc.sum(dc.absolute(dc.sub(y_hat, y))), 1.0 / n)


CONTRASTIVE = {
    "weca": weca_loss,
    "il": instance_loss,
    "tl": temporal_loss,
    "iltl": instance_temporal_loss,
}


def joint_loss(y_hat: Tensor, y, lat: BatchLatents, lam: float = 1.0, *, contrastive: str = "weca",
               normalize: bool = True) -> Tensor:
    """Mean forecast MAE plus ``lam`` times the contrastive term."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    c = CONTRASTIVE[contrastive](lat, normalize)
    return dc.add(forecast_mae(y_hat, y), dc.mul(c, lam))
