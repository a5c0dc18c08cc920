"""Parametric demand-shock curve, parameter sampling and tail injection.

The curve is ``a(n) = A * n * exp(-B * n**C) / 90409`` with ``n`` the day index
since onset. Injection adds ``sign * scale * a(.)`` to the tail of an input
window and continues the same curve into the forecast horizon. Injection
happens in z-scored space, so ``scale`` is in units of the series' train std.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CURVE_DIVISOR = 90409.0

# fitted-event distribution of the curve parameters
A_MEAN, A_STD, A_MIN = 74120.0, 20000.0, 1000.0
C_MEAN, C_STD, C_MIN = 0.806, 0.3, 0.1
B_FIXED = 0.39


class AnomalyError(ValueError):
    pass


@dataclass(frozen=True)
class AnomalyParams:
    A: float
    B: float = B_FIXED
    C: float = C_MEAN
    sign: int = 1
    onset: int = 0  # injection index inside the input window

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.A, self.B, self.C)):
            raise AnomalyError(f"non-finite anomaly parameters {self}")
        if self.B <= 0 or self.C <= 0:
            raise AnomalyError(f"B and C must be positive, got B={self.B}, C={self.C}")
        if self.sign not in (1, -1):
            raise AnomalyError(f"sign must be +1 or -1, got {self.sign}")
        if self.onset < 0:
            raise AnomalyError(f"onset must be >= 0, got {self.onset}")


@dataclass(frozen=True)
class AnomalyConfig:
    scale: float = 1.0  # normalised-space multiplier on the curve
    sigma_w: float = 1.0  # similarity-weight kernel width
    tail_fraction: float = 0.25  # injection_start drawn from the last quarter of the window


def anomaly_curve(n, params: AnomalyParams | None = None, *, A=None, B=None, C=None):
    """Evaluate the curve at day index ``n`` (scalar or array, n >= 0)."""
    if params is not None:
        A, B, C = params.A, params.B, params.C
    A, B, C = np.asarray(A, float), np.asarray(B, float), np.asarray(C, float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(C))):
        raise AnomalyError("non-finite anomaly parameters")
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 0):
        raise AnomalyError("day index must be >= 0")
    out = A * n * np.exp(-B * n**C) / CURVE_DIVISOR
    return float(out) if out.ndim == 0 else out


def peak_day(B: float, C: float) -> float:
    """Stationary point of n*exp(-B n^C): n* = (1/(B C))^(1/C)."""
    return (1.0 / (B * C)) ** (1.0 / C)


def _clipped_normal(rng: np.random.Generator, mean: float, std: float, low: float, n: int) -> np.ndarray:
    # clipping (not resampling) keeps the sample mean on the stated mean
    return np.maximum(rng.normal(mean, std, n), low)


@dataclass
class ParamDraws:
    """Column-wise parameters for many anomalies."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sign: np.ndarray
    onset: np.ndarray

    def __len__(self) -> int:
        return len(self.A)

    def __getitem__(self, k: int) -> AnomalyParams:
        return AnomalyParams(float(self.A[k]), float(self.B[k]), float(self.C[k]), int(self.sign[k]), int(self.onset[k]))


def sample_param_array(rng: np.random.Generator, n: int, T: int, tail_fraction: float = 0.25) -> ParamDraws:
    """Draw ``n`` parameter sets.

    A ~ N(74120, 20000^2) clipped below at 1000, C ~ N(0.806, 0.3^2) clipped
    below at 0.1, B = 0.39, sign uniform on {+1, -1}, and the onset uniform over the
    last ``tail_fraction`` of a length-``T`` window.
    """
    A = _clipped_normal(rng, A_MEAN, A_STD, A_MIN, n)
    C = _clipped_normal(rng, C_MEAN, C_STD, C_MIN, n)
    sign = np.where(rng.random(n) < 0.5, 1, -1)
    lo = T - max(1, int(round(T * tail_fraction)))
    onset = rng.integers(lo, T, size=n)
    return ParamDraws(A, np.full(n, B_FIXED), C, sign, onset)


def sample_params(rng: np.random.Generator, T: int = 56, tail_fraction: float = 0.25) -> AnomalyParams:
    return sample_param_array(rng, 1, T, tail_fraction)[0]


# --------------------------------------------------------------------------
# injection


@dataclass
class AugmentedPair:
    original_input: np.ndarray  # (T, C)
    original_target: np.ndarray  # (H, C)
    augmented_input: np.ndarray
    augmented_target: np.ndarray
    weights: np.ndarray  # (T,)
    params: AnomalyParams
    injection_start: int

    @property
    def input_anomaly(self) -> np.ndarray:
        return self.augmented_input - self.original_input


def anomaly_offsets(T: int, H: int, draws: ParamDraws, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Additive offsets (B, T) for inputs and (B, H) for horizons."""
    start = draws.onset[:, None]
    n_in = np.arange(T)[None, :] - start
    active = n_in >= 0
    n_all = np.concatenate([np.where(active, n_in, 0), T - start + np.arange(H)[None, :]], axis=1)
    A, B, C = draws.A[:, None], draws.B[:, None], draws.C[:, None]
    curve = A * n_all * np.exp(-B * n_all.astype(float) ** C) / CURVE_DIVISOR
    amp = (draws.sign * scale)[:, None] * curve
    return np.where(active, amp[:, :T], 0.0), amp[:, T:]


def inject_arrays(inputs: np.ndarray, targets: np.ndarray, draws: ParamDraws, scale: float = 1.0):
    """Batched injection: inputs (B, T, C), targets (B, H, C), one anomaly per row."""
    T, H = inputs.shape[1], targets.shape[1]
    if np.any(draws.onset < 0) or np.any(draws.onset >= T):
        raise AnomalyError(f"injection_start out of range [0, {T})")
    off_in, off_out = anomaly_offsets(T, H, draws, scale)
    return inputs + off_in[:, :, None], targets + off_out[:, :, None]


def compute_weights(original: np.ndarray, augmented: np.ndarray, sigma_w: float = 1.0) -> np.ndarray:
    """Per-timestep similarity weights exp(-d_t^2 / (2 sigma_w^2)).

    ``d_t`` is the Euclidean distance over channels between the two inputs at
    timestep t. Works on (T, C) or batched (B, T, C) inputs.
    """
    original = np.asarray(original, float)
    augmented = np.asarray(augmented, float)
    if original.shape != augmented.shape:
        raise AnomalyError(f"shape mismatch: {original.shape} vs {augmented.shape}")
    d2 = np.sum((original - augmented) ** 2, axis=-1)
    if math.isinf(sigma_w):
        return np.ones_like(d2)
    return np.exp(-d2 / (2.0 * sigma_w**2))


def inject(
    source: tuple[np.ndarray, np.ndarray],
    params: AnomalyParams,
    injection_start: int | None = None,
    *,
    scale: float = 1.0,
    sigma_w: float = 1.0,
) -> AugmentedPair:
    """Add one anomaly to a (T x C input, H x C target) pair.

    ``injection_start`` defaults to ``params.onset``.
    """
    x, y = (np.asarray(a, dtype=np.float64) for a in source)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    T = x.shape[0]
    start = params.onset if injection_start is None else injection_start
    if not 0 <= start < T:
        raise AnomalyError(f"injection_start {start} out of range [0, {T})")
    draws = ParamDraws(
        np.array([params.A]), np.array([params.B]), np.array([params.C]), np.array([params.sign]), np.array([start])
    )
    xa, ya = inject_arrays(x[None], y[None], draws, scale)
    return AugmentedPair(x, y, xa[0], ya[0], compute_weights(x, xa[0], sigma_w), params, int(start))
