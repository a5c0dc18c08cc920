"""Causal dilated-conv encoder and linear forecast head.

encode: (T, C) -> (T, D). The first layer lifts C channels to D, each later
layer adds a residual ``conv(relu(h))``. Left zero-padding keeps T' = T and
makes latent t depend on inputs 0..t only.

decode: (T, D) -> (H, C), a linear map of [z[T-1], mean_t z[t]].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

CHECKPOINT_MAGIC = "weca-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int = 1
    latent_dim: int = 64
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)

    def __post_init__(self):
        if self.latent_dim < 1 or self.input_channels < 1:
            raise ValueError("latent_dim and input_channels must be >= 1")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be a non-empty list of positive ints, got {self.dilations}")


@dataclass(frozen=True)
class DecoderConfig:
    horizon: int = 14
    output_channels: int = 1


@dataclass
class ModelParams:
    encoder: EncoderConfig
    decoder: DecoderConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.encoder,
            self.decoder,
            {k: dc.parameter(v.data.copy(), name=k) for k, v in self.tensors.items()},
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.tensors.values()])

    def equals(self, other: "ModelParams") -> bool:
        return self.tensors.keys() == other.tensors.keys() and all(
            np.array_equal(self.tensors[k].data, other.tensors[k].data) for k in self.tensors
        )


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(encoder: EncoderConfig, decoder: DecoderConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    K, D = encoder.kernel_size, encoder.latent_dim
    tensors: dict[str, Tensor] = {}
    cin = encoder.input_channels
    for k, _ in enumerate(encoder.dilations):
        bound = glorot_bound(K * cin, K * D)
        tensors[f"conv{k}.weight"] = dc.parameter(rng.uniform(-bound, bound, (K, cin, D)), name=f"conv{k}.weight")
        tensors[f"conv{k}.bias"] = dc.parameter(np.zeros(D), name=f"conv{k}.bias")
        cin = D
    out = decoder.horizon * decoder.output_channels
    bound = glorot_bound(2 * D, out)
    tensors["head.weight"] = dc.parameter(rng.uniform(-bound, bound, (2 * D, out)), name="head.weight")
    tensors["head.bias"] = dc.parameter(np.zeros(out), name="head.bias")
    return ModelParams(encoder, decoder, tensors)


def encode(x: Tensor, params: ModelParams) -> Tensor:
    """x: (T, C) or (B, T, C) -> z with the same leading dims and last axis D."""
    enc = params.encoder
    if x.data.ndim not in (2, 3) or x.shape[-1] != enc.input_channels:
        raise dc.ShapeError("encode", x.shape, detail=f"expected (..., T, {enc.input_channels})")
    h = None
    for k, dil in enumerate(enc.dilations):
        w, b = params[f"conv{k}.weight"], params[f"conv{k}.bias"]
        if h is None:
            h = dc.add(dc.causal_dilated_conv1d(x, w, dil), b)
        else:
            h = dc.add(h, dc.add(dc.causal_dilated_conv1d(dc.relu(h), w, dil), b))
    return h


def decode(z: Tensor, params: ModelParams) -> Tensor:
    """z: (T', D) or (B, T', D) -> forecast (H, C) or (B, H, C)."""
    D = params.encoder.latent_dim
    if z.data.ndim not in (2, 3) or z.shape[-1] != D:
        raise dc.ShapeError("decode", z.shape, detail=f"expected (..., T', {D})")
    last = dc.getitem(z, (..., -1, slice(None)))
    pooled = dc.mean(z, axis=-2)
    feat = dc.concat([last, pooled], axis=-1)
    flat = dc.add(dc.matmul(feat if feat.data.ndim == 2 else dc.reshape(feat, (1, 2 * D)), params["head.weight"]),
                  params["head.bias"])
    H, C = params.decoder.horizon, params.decoder.output_channels
    return dc.reshape(flat, (H, C) if z.data.ndim == 2 else (z.shape[0], H, C))


def forecast(x: Tensor, params: ModelParams) -> Tensor:
    return decode(encode(x, params), params)


def predict(x: np.ndarray, params: ModelParams, batch_size: int = 512) -> np.ndarray:
    """Forecasts for a stack of windows without recording a tape."""
    outs = []
    for k in range(0, x.shape[0], batch_size):
        outs.append(forecast(dc.tensor(x[k : k + batch_size]), _frozen(params)).data)
    if not outs:
        return np.zeros((0, params.decoder.horizon, params.decoder.output_channels))
    return np.concatenate(outs)


def _frozen(params: ModelParams) -> ModelParams:
    return ModelParams(params.encoder, params.decoder, {k: dc.tensor(v.data) for k, v in params.items()})


# --------------------------------------------------------------------------
# checkpoints: plain text, float.hex values so the round trip is bit-exact


def save_checkpoint(params: ModelParams, path: str | Path, meta: dict[str, str] | None = None) -> None:
    enc, dec = params.encoder, params.decoder
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"encoder input_channels={enc.input_channels} latent_dim={enc.latent_dim} "
        f"kernel_size={enc.kernel_size} dilations={','.join(map(str, enc.dilations))}",
        f"decoder horizon={dec.horizon} output_channels={dec.output_channels}",
    ]
    for k, v in sorted((meta or {}).items()):
        lines.append(f"meta {k}={v}")
    for name, t in params.items():
        lines.append(f"tensor {name} {','.join(map(str, t.shape))}")
        lines.append(" ".join(float(v).hex() for v in t.data.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _kv(tokens: list[str]) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in tokens)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict[str, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {head[1]}")
    e = _kv(lines[1].split()[1:])
    d = _kv(lines[2].split()[1:])
    enc = EncoderConfig(
        int(e["input_channels"]), int(e["latent_dim"]), int(e["kernel_size"]),
        tuple(int(v) for v in e["dilations"].split(",")),
    )
    dec = DecoderConfig(int(d["horizon"]), int(d["output_channels"]))
    meta: dict[str, str] = {}
    tensors: dict[str, Tensor] = {}
    k = 3
    while k < len(lines):
        parts = lines[k].split(" ", 1)
        if parts[0] == "meta":
            key, val = parts[1].split("=", 1)
            meta[key] = val
            k += 1
        elif parts[0] == "tensor":
            name, shape_s = parts[1].split()
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            vals = np.array([float.fromhex(v) for v in lines[k + 1].split()], dtype=np.float64)
            tensors[name] = dc.parameter(vals.reshape(shape), name=name)
            k += 2
        else:
            raise ValueError(f"{path}: line {k + 1}: unexpected record {parts[0]!r}")
    return ModelParams(enc, dec, tensors), meta
