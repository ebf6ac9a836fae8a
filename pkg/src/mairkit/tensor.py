"""Dense tensors over numpy with tape-based reverse-mode differentiation.

Tensors are immutable wrappers around row-major numpy arrays. Operations are
recorded on the active :class:`Tape` (if any) whenever one of their inputs
requires a gradient; :func:`backward` replays the tape in reverse.

    with Tape() as tape:
        loss = (x * x).sum()
    grads = backward(tape, loss)
    grads[x]
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_state = threading.local()


class Tensor:
    """Immutable n-dimensional array that can participate in differentiation."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            elif isinstance(data, Tensor):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype, copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        # ascontiguousarray would promote 0-d results to shape (1,)
        arr = np.require(arr, requirements="C")
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        return t

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
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype, requires_grad: bool | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.astype(dtype), requires_grad=rg)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


# ---------------------------------------------------------------------------
# Tape


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple, backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes nest, the innermost one records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Gradients(dict):
    """Leaf tensor -> gradient array. Tensors that did not participate map to zeros."""

    def __missing__(self, key: Tensor) -> np.ndarray:
        return np.zeros_like(key.data)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Propagate d(loss)/d(.) back through ``tape`` and return leaf gradients."""
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(n.out) for n in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key not in produced:
                leaves[key] = t
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = Gradients()
    for key, t in leaves.items():
        out[t] = np.asarray(grads.get(key, np.zeros_like(t.data)), dtype=t.dtype).reshape(t.shape)
    if id(loss) not in produced and loss.requires_grad:
        out[loss] = np.ones_like(loss.data)
    return out


def record(out: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out`` as a Tensor and put it on the active tape when needed.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    result = Tensor._wrap(np.asarray(out))
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.nodes.append(_Node(result, tuple(inputs), backward_fn))
    return result


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None:
        dtype = like.dtype
    elif isinstance(x, np.ndarray) and x.dtype.kind == "f":
        dtype = x.dtype
    else:
        dtype = DEFAULT_DTYPE
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for tensor with {ndim} dims")
    return axis % ndim


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# ---------------------------------------------------------------------------
# Elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    return record(a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return record(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return record(out, (a,), lambda g: (g * 0.5 / out,))


def hypot(a, b) -> Tensor:
    """sqrt(a² + b²) without squaring round-off; the gradient is taken as 0 where both are 0."""
    a, b = _pair(a, b)
    out = np.hypot(a.data, b.data)
    safe = np.where(out == 0, 1, out)
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g * a.data / safe, a.shape),
                             _unbroadcast(g * b.data / safe, b.shape)))


def tabs(a: Tensor) -> Tensor:
    return record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return record(out, (a,), lambda g: (g * out * (1 - out),))


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return record(a.data * s, (a,), lambda g: (g * (s * (1 + a.data * (1 - s))),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return record(out, (a,), lambda g: (g * _sigmoid(x),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return record(out, (a,), bw)


# ---------------------------------------------------------------------------
# Reductions and linear maps


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims and axes is not None:
            g = np.expand_dims(g, axes)
        elif not keepdims:
            g = np.reshape(g, (1,) * a.ndim)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def _axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(_norm_axis(ax, ndim) for ax in axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs tensors with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape[-1]} vs {b.shape[-2]}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(a.data @ b.data, (a, b), bw)


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum.

    Every index of an operand must appear in the output or in the other
    operand, and no index may repeat within one operand.
    """
    a, b = _pair(a, b)
    lhs, out_idx = spec.replace(" ", "").split("->")
    ia, ib = lhs.split(",")
    for own, other in ((ia, ib), (ib, ia)):
        if len(set(own)) != len(own):
            raise ValueError(f"repeated index in operand '{own}'")
        lost = set(own) - set(other) - set(out_idx)
        if lost:
            raise ValueError(f"indices {sorted(lost)} are reduced within one operand")
    out = np.einsum(spec, a.data, b.data, optimize=True)

    def bw(g):
        ga = np.einsum(f"{out_idx},{ib}->{ia}", g, b.data, optimize=True)
        gb = np.einsum(f"{out_idx},{ia}->{ib}", g, a.data, optimize=True)
        return ga, gb

    return record(out, (a, b), bw)


# ---------------------------------------------------------------------------
# Shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(_norm_axis(ax, a.ndim) for ax in axes)
    inv = tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return record(np.broadcast_to(a.data, shape), (a,), lambda g: (_unbroadcast(g, a.shape),))


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in parts)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic(index)

    def bw(g):
        z = np.zeros_like(a.data)
        if basic:
            z[index] += g
        else:
            np.add.at(z, index, g)
        return (z,)

    return record(a.data[index], (a,), bw)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; a permutation index gets an exact inverse-gather gradient."""
    ax = _norm_axis(axis, a.ndim)
    idx = np.asarray(indices, dtype=np.intp)
    n = a.shape[ax]
    is_perm = idx.ndim == 1 and idx.size == n and np.array_equal(np.sort(idx), np.arange(n))

    def bw(g):
        if is_perm:
            inv = np.empty_like(idx)
            inv[idx] = np.arange(n)
            return (np.take(g, inv, axis=ax),)
        z = np.zeros_like(a.data)
        np.add.at(np.moveaxis(z, ax, 0), idx, np.moveaxis(g, ax, 0))
        return (z,)

    return record(np.take(a.data, idx, axis=ax), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ax = _norm_axis(axis, tensors[0].ndim)
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return record(out, tensors, lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ax = _norm_axis(axis, tensors[0].ndim + 1)
    out = np.stack([t.data for t in tensors], axis=ax)
    return record(out, tensors,
                  lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))))


def split(a: Tensor, parts: int, axis: int = 0) -> list[Tensor]:
    ax = _norm_axis(axis, a.ndim)
    n = a.shape[ax]
    if n % parts:
        raise ValueError(f"axis {axis} of length {n} does not split into {parts} parts")
    step = n // parts
    out = []
    for i in range(parts):
        index = [slice(None)] * a.ndim
        index[ax] = slice(i * step, (i + 1) * step)
        out.append(getitem(a, tuple(index)))
    return out


# ---------------------------------------------------------------------------
# Normalization


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               axis: int = -3, eps: float = 1e-6) -> Tensor:
    """Normalize over ``axis`` (the channel axis of C×H×W maps by default)."""
    ax = _norm_axis(axis, x.ndim)
    shape = [1] * x.ndim
    shape[ax] = x.shape[ax]
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g_arr = gamma.data.reshape(shape) if gamma is not None else 1.0
    b_arr = beta.data.reshape(shape) if beta is not None else 0.0
    out = xhat * g_arr + b_arr
    other = tuple(i for i in range(x.ndim) if i != ax)

    def bw(g):
        gx_hat = g * g_arr
        gx = inv * (gx_hat - gx_hat.mean(axis=ax, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=ax, keepdims=True))
        ggamma = (g * xhat).sum(axis=other) if gamma is not None else None
        gbeta = g.sum(axis=other) if beta is not None else None
        return gx, ggamma, gbeta

    inputs = [x, gamma if gamma is not None else _NONE, beta if beta is not None else _NONE]
    return record(out.astype(x.dtype, copy=False), inputs, bw)


_NONE = Tensor._wrap(np.zeros(()))


# ---------------------------------------------------------------------------
# Convolution and pixel shuffle


def _conv(xp: np.ndarray, w: np.ndarray, groups: int, H: int, W: int) -> np.ndarray:
    """Valid cross-correlation of a pre-padded batch. xp: B×C×(H+k-1)×(W+k-1)."""
    B, C = xp.shape[:2]
    O, Cg, k, _ = w.shape
    if groups == 1:
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B,C,H,W,k,k
        y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B,H,W,O
        return np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    Og = O // groups
    x5 = xp.reshape(B, groups, Cg, *xp.shape[2:])
    w5 = w.reshape(groups, Og, Cg, k, k)
    y = np.zeros((B, groups, Og, H, W), dtype=np.result_type(xp, w))
    for i in range(k):
        for j in range(k):
            patch = x5[..., i:i + H, j:j + W]
            if Cg == 1 and Og == 1:
                y[:, :, 0] += w5[None, :, 0, 0, i, j, None, None] * patch[:, :, 0]
            else:
                y += np.einsum("goc,bgchw->bgohw", w5[..., i, j], patch, optimize=True)
    return y.reshape(B, O, H, W)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, groups: int = 1) -> Tensor:
    """Same-size 2D cross-correlation with zero padding (k-1)/2.

    x is C×H×W or B×C×H×W; weight is C_out×(C_in/groups)×k×k.
    """
    if x.ndim not in (3, 4):
        raise ValueError(f"conv2d input must be C×H×W or B×C×H×W, got shape {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-D, got shape {weight.shape}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    B, C, H, W = xd.shape
    O, Cg, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {k}×{k2}")
    if C % groups or O % groups:
        raise ValueError(f"channels {C}->{O} not divisible by groups={groups}")
    if Cg * groups != C:
        raise ValueError(
            f"conv2d input-channel axis mismatch: input has {C} channels, "
            f"weight expects {Cg * groups}")
    if bias is not None and bias.shape != (O,):
        raise ValueError(f"conv2d bias must have shape ({O},), got {bias.shape}")
    p = k // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
    y = _conv(xp, weight.data, groups, H, W)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    y = y.astype(x.dtype, copy=False)

    def bw(g):
        g4 = g[None] if squeeze else g
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        # input gradient = correlation with the flipped, in/out-transposed kernel
        Og = O // groups
        wt = weight.data.reshape(groups, Og, Cg, k, k).transpose(0, 2, 1, 3, 4)
        wt = wt.reshape(groups * Cg, Og, k, k)[:, :, ::-1, ::-1]
        gp = np.pad(g4, ((0, 0), (0, 0), (p, p), (p, p)))
        gx = _conv(gp, np.ascontiguousarray(wt), groups, H, W)
        if groups == 1:
            win = sliding_window_view(xp, (k, k), axis=(2, 3))
            gw = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))
        else:
            x5 = xp.reshape(B, groups, Cg, *xp.shape[2:])
            g5 = g4.reshape(B, groups, Og, H, W)
            gw = np.empty((groups, Og, Cg, k, k), dtype=y.dtype)
            for i in range(k):
                for j in range(k):
                    gw[..., i, j] = np.einsum("bgohw,bgchw->goc", g5,
                                              x5[..., i:i + H, j:j + W], optimize=True)
            gw = gw.reshape(O, Cg, k, k)
        return (gx[0] if squeeze else gx), gw, gb

    inputs = [x, weight, bias if bias is not None else _NONE]
    return record(y[0] if squeeze else y, inputs, bw)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(…, C·r², H, W) -> (…, C, rH, rW); channel c·r²+i·r+j lands at offset (i, j)."""
    *lead, Cr, H, W = x.shape
    if Cr % (r * r):
        raise ValueError(f"pixel_shuffle: {Cr} channels not divisible by r²={r * r}")
    C = Cr // (r * r)
    n = len(lead)
    t = reshape(x, (*lead, C, r, r, H, W))
    t = transpose(t, (*range(n), n, n + 3, n + 1, n + 4, n + 2))
    return reshape(t, (*lead, C, H * r, W * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    *lead, C, Hr, Wr = x.shape
    if Hr % r or Wr % r:
        raise ValueError(f"pixel_unshuffle: spatial size {Hr}×{Wr} not divisible by {r}")
    H, W = Hr // r, Wr // r
    n = len(lead)
    t = reshape(x, (*lead, C, H, r, W, r))
    t = transpose(t, (*range(n), n, n + 2, n + 4, n + 1, n + 3))
    return reshape(t, (*lead, C * r * r, H, W))
