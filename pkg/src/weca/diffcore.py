"""Small define-by-run reverse-mode autodiff engine over float64 numpy arrays.

Only the operations needed by the forecasting model and the contrastive
losses are provided. Broadcasting is deliberately narrow: besides equal
shapes, ``add``/``sub`` accept a 1-D right operand matching the last axis
(a bias), and ``mul`` accepts a python scalar.

Usage::

    with Tape() as tape:
        loss = mean(relu(matmul(x, w)))
    tape.backward(loss)
    w.grad
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NumericOverflowError",
    "BackwardError",
    "tensor",
    "parameter",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "getitem",
    "causal_dilated_conv1d",
    "relu",
    "exp",
    "log",
    "absolute",
    "sum",
    "mean",
    "dot_rows",
    "l2_normalize_rows",
    "logsumexp_rows",
    "numeric_gradient",
    "relative_error",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericOverflowError(ArithmeticError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        super().__init__(f"{op}: non-finite output" + (f" ({detail})" if detail else ""))


class BackwardError(RuntimeError):
    pass


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericOverflowError("tensor", "input contains NaN or Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def tensor(data, name: str | None = None) -> Tensor:
    """Constant tensor (no gradient)."""
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of executed ops, active inside a ``with`` block."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()
        self._consumed = False

    def contains(self, t: Tensor) -> bool:
        return any(node.out is t for node in self.nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every tensor on the tape."""
        if self._consumed:
            raise BackwardError("backward already called on this tape; call reset() first")
        if loss.size != 1 or loss.data.ndim != 0:
            raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes or self.nodes[-1].out is not loss and not self.contains(loss):
            raise BackwardError("loss was not produced on this tape")
        self._consumed = True
        # intermediate grads live here; leaf grads are written to the tensors
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        # whatever remains belongs to leaves (parameters)
        leaves = {}
        for node in self.nodes:
            for inp in node.inputs:
                if inp.requires_grad and id(inp) in grads:
                    leaves[id(inp)] = inp
        for key, leaf in leaves.items():
            g = grads[key]
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Backpropagate through ``tape`` (default: innermost active tape)."""
    if tape is None:
        if not _ACTIVE:
            raise BackwardError("no active tape")
        tape = _ACTIVE[-1]
    tape.backward(loss)


def _finish(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericOverflowError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad and _ACTIVE:
        _ACTIVE[-1].nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


# --------------------------------------------------------------------------
# elementwise


def _bias_compatible(a: Tensor, b: Tensor, op: str) -> bool:
    if a.shape == b.shape:
        return False
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeError(op, a.shape, b.shape, detail="expected equal shapes or a last-axis bias")


def _reduce_bias(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    bias = _bias_compatible(a, b, "add")

    def bw(g):
        return g, (_reduce_bias(g) if bias else g)

    return _finish("add", a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bias = _bias_compatible(a, b, "sub")

    def bw(g):
        return g, -(_reduce_bias(g) if bias else g)

    return _finish("sub", a.data - b.data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar or a same-shape tensor."""
    if not isinstance(b, Tensor):
        c = float(b)
        return _finish("mul", a.data * c, (a,), lambda g: (g * c,))
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _finish("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return _finish("neg", -a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _finish("relu", a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _finish("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericOverflowError("log", "argument must be positive")
    ad = a.data
    return _finish("log", np.log(ad), (a,), lambda g: (g / ad,))


def absolute(a: Tensor) -> Tensor:
    sgn = np.sign(a.data)
    return _finish("abs", np.abs(a.data), (a,), lambda g: (g * sgn,))


# --------------------------------------------------------------------------
# shape ops


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError("transpose", a.shape, detail=f"bad axes {axes}")
    inv = tuple(np.argsort(axes))
    return _finish("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    old = a.shape
    return _finish("reshape", out, (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _finish("concat", out, tensors, bw)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing."""
    out = a.data[key]
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _finish("getitem", np.array(out, dtype=np.float64), (a,), bw)


# --------------------------------------------------------------------------
# reductions


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is None:
        return _finish("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return _finish("sum", out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def dot_rows(a: Tensor, b: Tensor) -> Tensor:
    """Dot product along the last axis: (..., D) x (..., D) -> (...)."""
    if a.shape != b.shape:
        raise ShapeError("dot_rows", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = np.einsum("...d,...d->...", ad, bd)

    def bw(g):
        ge = g[..., None]
        return ge * bd, ge * ad

    return _finish("dot_rows", out, (a, b), bw)


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each last-axis row to unit norm; all-zero rows stay zero."""
    ad = a.data
    norm = np.sqrt(np.einsum("...d,...d->...", ad, ad) + eps)[..., None]
    out = ad / norm

    def bw(g):
        proj = np.einsum("...d,...d->...", g, out)[..., None]
        return ((g - out * proj) / norm,)

    return _finish("l2_normalize_rows", out, (a,), bw)


def logsumexp_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """log(sum(exp(a))) along the last axis.

    ``mask`` (boolean, same shape) selects which entries take part; each row
    needs at least one selected entry.
    """
    ad = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError("logsumexp_rows", a.shape, mask.shape, detail="mask")
        if not np.all(mask.any(axis=-1)):
            raise ValueError("logsumexp_rows: a row has no unmasked entries")
        masked = np.where(mask, ad, -np.inf)
    else:
        masked = ad
    m = masked.max(axis=-1, keepdims=True)
    e = np.exp(masked - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (m + np.log(s))[..., 0]
    soft = e / s

    def bw(g):
        return (g[..., None] * soft,)

    return _finish("logsumexp_rows", out, (a,), bw)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., n, k) @ (k, m) or batched (..., n, k) @ (..., k, m)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape, detail="operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if b.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dimensions differ")
    ad, bd = a.data, b.data
    out = ad @ bd
    shared = b.data.ndim == 2

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if shared:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _finish("matmul", out, (a, b), bw)


def causal_dilated_conv1d(x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Causal 1-D convolution over time.

    x is (T, Cin) or (B, T, Cin); kernel is (K, Cin, Cout). The signal is
    left-padded with (K-1)*dilation zeros so the output keeps length T and
    output[t] only reads input[t - (K-1-j)*dilation] for j in 0..K-1.
    """
    if dilation < 1 or int(dilation) != dilation:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    if kernel.data.ndim != 3 or x.data.ndim not in (2, 3) or x.shape[-1] != kernel.shape[1]:
        raise ShapeError("causal_dilated_conv1d", x.shape, kernel.shape)
    xd = x.data if x.data.ndim == 3 else x.data[None]
    wd = kernel.data
    K, cin, cout = wd.shape
    Bn, T = xd.shape[0], xd.shape[1]
    pad = (K - 1) * dilation
    xp = np.concatenate([np.zeros((Bn, pad, cin)), xd], axis=1)
    offs = [j * dilation for j in range(K)]
    # im2col: cols[b, t, j*cin:(j+1)*cin] = xp[b, t + j*dilation]
    cols = np.concatenate([xp[:, o : o + T] for o in offs], axis=-1).reshape(Bn * T, K * cin)
    w2 = wd.reshape(K * cin, cout)
    out = (cols @ w2).reshape(Bn, T, cout)
    squeeze = x.data.ndim == 2

    def bw(g):
        g2 = g.reshape(Bn * T, cout)
        gw = (cols.T @ g2).reshape(K, cin, cout)
        gcols = (g2 @ w2.T).reshape(Bn, T, K, cin)
        gxp = np.zeros((Bn, T + pad, cin))
        for j, o in enumerate(offs):
            gxp[:, o : o + T] += gcols[:, :, j]
        gx = gxp[:, pad:]
        return (gx[0] if squeeze else gx), gw

    return _finish("causal_dilated_conv1d", out[0] if squeeze else out, (x, kernel), bw)


def numeric_gradient(f: Callable[[], float], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``x.data`` (mutated in place, restored)."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f()
        flat[k] = orig - step
        fm = f()
        flat[k] = orig
        gf[k] = (fp - fm) / (2 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> float:
    """||a - b|| / max(||a||, ||b||, floor).

    The floor stops gradients that are zero up to rounding from being compared
    relatively.
    """
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / scale

