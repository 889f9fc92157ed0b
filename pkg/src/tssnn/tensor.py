"""Dense tensors with a recorded-operation reverse-mode gradient engine.

A :class:`Tensor` wraps a float32 numpy array (float64 is accepted for
numerical verification). Operations performed while a :class:`GradTape` is
active, and whose inputs require gradients, are appended to that tape.
:func:`backward` replays the tape in reverse to accumulate adjoints.

No broadcasting is performed except between a rank-0 tensor (or a Python
scalar) and a tensor; every other shape mismatch raises
:class:`~tssnn.errors.DimensionError`.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

_DTYPES = (np.float32, np.float64)
_local = threading.local()


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in _DTYPES else np.float32
    arr = np.asarray(arr, dtype=dtype)
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


class Tensor:
    """An n-dimensional array that can take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: GradTape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass
class Record:
    name: str
    inputs: tuple
    output: Tensor
    adjoint: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradTape:
    """Ordered log of recorded operations.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded when at least one input requires a gradient.
    """

    def __init__(self):
        self.records: list[Record] = []
        self.visit_order: list[int] = []

    def __enter__(self) -> "GradTape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, name, inputs, output, adjoint) -> None:
        output._tape = self
        self.records.append(Record(name, tuple(inputs), output, adjoint))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        self.visit_order = []
        for idx in range(len(self.records) - 1, -1, -1):
            rec = self.records[idx]
            g = adj.pop(id(rec.output), None)
            if g is None:
                continue
            self.visit_order.append(idx)
            for inp, gi in zip(rec.inputs, rec.adjoint(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise DimensionError(f"adjoint of {rec.name} produced shape {gi.shape}, expected {inp.shape}")
                key = id(inp)
                if inp._tape is None:
                    leaves[key] = inp
                if key in adj:
                    adj[key] = adj[key] + gi
                else:
                    adj[key] = gi
        if loss._tape is None and loss.requires_grad:
            leaves[id(loss)] = loss
        out = {}
        for key, leaf in leaves.items():
            g = adj[key].astype(leaf.dtype, copy=False)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            out[leaf] = leaf.grad
        return out


def current_tape() -> GradTape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def apply_op(name: str, inputs: Sequence, out_data: np.ndarray, adjoint) -> Tensor:
    """Wrap ``out_data`` as a tensor and record it on the active tape.

    ``adjoint`` maps the output gradient to one gradient (or ``None``) per
    entry of ``inputs``.
    """
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    tape = current_tape()
    if needs and tape is not None:
        tape.record(name, inputs, out, adjoint)
    return out


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate gradients of ``loss`` into every leaf that requires them."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return {loss: loss.grad}
        return {}
    return loss._tape.backward(loss)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def tensor_create(dims, fill=0.0, requires_grad: bool = False) -> Tensor:
    """Create a rank-4 ``[T, C, H, W]`` tensor from a fill value or a buffer."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or any(d < 1 for d in dims):
        raise DimensionError(f"dims must be four positive integers, got {dims}")
    if np.isscalar(fill):
        data = np.full(dims, fill, dtype=np.float32)
    else:
        buf = np.asarray(fill, dtype=np.float32).reshape(-1)
        if buf.size != int(np.prod(dims)):
            raise DimensionError(f"buffer has {buf.size} values, dims {dims} need {int(np.prod(dims))}")
        data = buf.reshape(dims).copy()
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _wrap(a, b) if not isinstance(a, Tensor) else a
    b = _wrap(b, a)
    _check_same(a, b, "add")
    return apply_op("add", (a, b), a.data + b.data,
                    lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a, b) -> Tensor:
    a = _wrap(a, b) if not isinstance(a, Tensor) else a
    b = _wrap(b, a)
    _check_same(a, b, "sub")
    return apply_op("sub", (a, b), a.data - b.data,
                    lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a, b) -> Tensor:
    a = _wrap(a, b) if not isinstance(a, Tensor) else a
    b = _wrap(b, a)
    _check_same(a, b, "mul")
    return apply_op("mul", (a, b), a.data * b.data,
                    lambda g: (_unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return apply_op("scale", (a,), a.data * c, lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return apply_op("add_scalar", (a,), a.data + c, lambda g: (g,))


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(a.data.sum(dtype=a.dtype), dtype=a.dtype)
    return apply_op("sum", (a,), out, lambda g: (np.full(a.shape, g, dtype=a.dtype),))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = a.size
        out = np.asarray(a.data.sum(dtype=a.dtype) / a.dtype.type(n), dtype=a.dtype)
        return apply_op("mean", (a,), out, lambda g: (np.full(a.shape, g / a.dtype.type(n), dtype=a.dtype),))
    n = a.shape[axis]
    inv = a.dtype.type(1.0 / n)
    out = a.data.sum(axis=axis) * inv

    def adjoint(g):
        return (np.broadcast_to(np.expand_dims(g * inv, axis), a.shape).copy(),)

    return apply_op("mean", (a,), out, adjoint)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return apply_op("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def index(a: Tensor, i: int) -> Tensor:
    """Select entry ``i`` of the leading axis."""

    def adjoint(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return apply_op("index", (a,), a.data[i].copy(), adjoint)


def stack(items: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    shapes = {t.shape for t in items}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in items])
    return apply_op("stack", tuple(items), out, lambda g: tuple(g[k] for k in range(len(items))))


def slice_assign(base: Tensor, key, value: Tensor) -> Tensor:
    """Return a copy of ``base`` whose ``key`` region is replaced by ``value``."""
    region = base.data[key]
    if region.shape != value.shape:
        raise DimensionError(f"slice_assign: region {region.shape} vs value {value.shape}")
    out = base.data.copy()
    out[key] = value.data

    def adjoint(g):
        gb = g.copy()
        gb[key] = 0
        return gb, g[key].copy()

    return apply_op("slice_assign", (base, value), out, adjoint)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return apply_op("matmul", (a, b), a.data @ b.data,
                    lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y = x @ weight.T + bias`` over the last axis of ``x``."""
    out_f, in_f = weight.shape
    if x.shape[-1] != in_f:
        raise DimensionError(f"linear: input features {x.shape[-1]} != weight in-features {in_f}")
    if bias is not None and bias.shape != (out_f,):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({out_f},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, in_f)
    y = x2 @ weight.data.T
    if bias is not None:
        y = y + bias.data
    y = y.reshape(lead + (out_f,))

    def adjoint(g):
        g2 = g.reshape(-1, out_f)
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return apply_op("linear", inputs, y, adjoint)


def _frames(x: Tensor) -> np.ndarray:
    if x.ndim not in (4, 5):
        raise DimensionError(f"expected [T,C,H,W] or [T,N,C,H,W], got rank {x.ndim}")
    return x.data.reshape((-1,) + x.shape[-3:])


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation applied independently at every timestep (and sample)."""
    O, C, K, K2 = kernel.shape
    if K != K2:
        raise DimensionError(f"conv2d: kernel must be square, got {K}x{K2}")
    if x.ndim not in (4, 5) or x.shape[-3] != C:
        raise DimensionError(f"conv2d: input {x.shape} does not carry {C} channels")
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({O},)")
    frames = _frames(x)
    B, _, H, W = frames.shape
    OH = conv_output_size(H, K, stride, padding)
    OW = conv_output_size(W, K, stride, padding)
    if OH < 1 or OW < 1:
        raise DimensionError(f"conv2d: kernel {K} larger than padded input {H}x{W}")
    xp = np.pad(frames, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else frames
    win = np.lib.stride_tricks.sliding_window_view(xp, (K, K), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :OH, :OW]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * OH * OW, C * K * K)
    wmat = kernel.data.reshape(O, C * K * K)
    y = cols @ wmat.T
    if bias is not None:
        y = y + bias.data
    y = y.reshape(B, OH, OW, O).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y).reshape(x.shape[:-3] + (O, OH, OW))
    Hp, Wp = xp.shape[2], xp.shape[3]

    def adjoint(g):
        g2 = np.ascontiguousarray(g.reshape(B, O, OH, OW).transpose(0, 2, 3, 1)).reshape(B * OH * OW, O)
        gw = (g2.T @ cols).reshape(kernel.shape)
        gcols = (g2 @ wmat).reshape(B, OH, OW, C, K, K)
        gxp = kernels.col2im(gcols, Hp, Wp, stride)
        gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        gx = np.ascontiguousarray(gx).reshape(x.shape)
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, kernel, bias) if bias is not None else (x, kernel)
    return apply_op("conv2d", inputs, y, adjoint)


def avg_pool2d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping average pooling; spatial dims must be divisible by ``size``."""
    H, W = x.shape[-2:]
    if H % size or W % size:
        raise DimensionError(f"avg_pool2d: {H}x{W} not divisible by {size}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(lead + (H // size, size, W // size, size))
    inv = x.dtype.type(1.0 / (size * size))
    out = blocks.sum(axis=(-3, -1)) * inv

    def adjoint(g):
        gg = np.broadcast_to((g * inv)[..., :, None, :, None], blocks.shape)
        return (np.ascontiguousarray(gg).reshape(x.shape),)

    return apply_op("avg_pool2d", (x,), out, adjoint)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with statistics pooled over time, batch and space.

    In training mode the running statistics are updated in place.
    """
    C = gamma.shape[0]
    if x.ndim < 3 or x.shape[-3] != C:
        raise DimensionError(f"batch_norm: input {x.shape} does not carry {C} channels")
    dt = x.dtype.type
    frames = _frames(x)
    axes = (0, 2, 3)
    n = frames.shape[0] * frames.shape[2] * frames.shape[3]
    if training:
        mu = frames.mean(axis=axes, dtype=x.dtype)
        var = frames.var(axis=axes, dtype=x.dtype)
        running_mean *= dt(1 - momentum)
        running_mean += dt(momentum) * mu
        unbiased = var * dt(n / max(n - 1, 1))
        running_var *= dt(1 - momentum)
        running_var += dt(momentum) * unbiased
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = (dt(1.0) / np.sqrt(var + dt(eps))).astype(x.dtype)
    xhat = (frames - mu[:, None, None]) * inv_std[:, None, None]
    y = xhat * gamma.data[:, None, None] + beta.data[:, None, None]
    y = y.reshape(x.shape)

    def adjoint(g):
        gf = g.reshape(frames.shape)
        gbeta = gf.sum(axis=axes)
        ggamma = (gf * xhat).sum(axis=axes)
        gxhat = gf * gamma.data[:, None, None]
        if training:
            m1 = gxhat.mean(axis=axes)
            m2 = (gxhat * xhat).mean(axis=axes)
            gx = (gxhat - m1[:, None, None] - xhat * m2[:, None, None]) * inv_std[:, None, None]
        else:
            gx = gxhat * inv_std[:, None, None]
        return gx.reshape(x.shape), ggamma, gbeta

    return apply_op("batch_norm", (x, gamma, beta), y, adjoint)


def cross_entropy(scores: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(scores)[label]`` over rows, max-shifted for stability."""
    s = scores.data if scores.ndim == 2 else scores.data[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    N, K = s.shape
    if labels.shape != (N,):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {N} rows")
    if labels.min() < 0 or labels.max() >= K:
        raise ContractError(f"cross_entropy: labels must lie in [0, {K})")
    shifted = s - s.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(N)
    losses = logsum - shifted[rows, labels]
    out = np.asarray(losses.mean(), dtype=scores.dtype)

    def adjoint(g):
        p = np.exp(shifted - logsum[:, None])
        p[rows, labels] -= 1
        gs = (p * (g / N)).astype(scores.dtype)
        return (gs.reshape(scores.shape),)

    return apply_op("cross_entropy", (scores,), out, adjoint)
