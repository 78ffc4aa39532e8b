"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one operand requires a gradient; with no tape active nothing is
recorded and forwards run without bookkeeping.  Binary ops need equal
shapes, except that the right operand may be a 1-D vector matching the last
axis of the left one (a bias).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, DegenerateBatchError, DimensionError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

class _TapeStack(threading.local):
    def __init__(self):
        self.stack: list[Tape] = []


_local = _TapeStack()


class Tensor:
    """An n-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_recorded")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0 or min(arr.shape) < 1:
            raise DimensionError(f"tensor dimensions must all be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._recorded = False

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> Tensor:
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t._recorded = False
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    op: str


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is already in
    topological order.  A tape belongs to one thread.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        assert popped is self

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn, op: str) -> None:
        self.nodes.append(Node(inputs, output, backward, op))
        self._produced.add(id(output))
        output._recorded = True

    def backward(self, loss: Tensor) -> None:
        """Accumulate dloss/dt into ``t.grad`` for every leaf tensor that requires grad."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced and (loss._recorded or not loss.requires_grad):
            raise ContractError("loss is not reachable from this tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if id(loss) not in self._produced:
            leaves[id(loss)] = loss

        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
                if key not in self._produced:
                    leaves[key] = t

        # one addition per leaf per call, so repeated calls scale exactly
        for key, t in leaves.items():
            total = pending[key]
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += total


def _stack() -> list[Tape]:
    return _local.stack


def current_tape() -> Tape | None:
    stack = _local.stack
    return stack[-1] if stack else None


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def zero_grad(tensors) -> None:
    for t in tensors:
        t.zero_grad()


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> Tensor:
    requires = False
    for t in inputs:
        if t.requires_grad:
            requires = True
            break
    out = Tensor._wrap(data, requires)
    stack = _local.stack
    if requires and stack:
        stack[-1].record(inputs, out, backward_fn, op)
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


# -- binary elementwise ---------------------------------------------------------


def _check_binary(a: Tensor, b: Tensor, op: str) -> bool:
    """Return True when ``b`` is a bias broadcast over the last axis of ``a``."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return False
    if len(sb) == 1 and len(sa) >= 2 and sa[-1] == sb[0]:
        return True
    raise DimensionError(f"{op}: shapes {sa} and {sb} are incompatible")


def _unbias(g: np.ndarray, bias: bool) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g


def add(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_binary(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, _unbias(g, bias)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_binary(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -_unbias(g, bias)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def backward_fn(g):
        return g * bd, _unbias(g * ad, bias)

    return _result(ad * bd, (a, b), backward_fn, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not agree")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


# -- unary elementwise ----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def lstm_gates(pre: Tensor) -> Tensor:
    """Gate activations for pre-activations laid out [i | f | g | o] along the last axis.

    Sigmoid on the i, f and o blocks, tanh on the g block; one node instead of four.
    """
    width = pre.shape[-1]
    if width % 4:
        raise DimensionError(f"lstm_gates: last axis {width} is not a multiple of 4")
    hsz = width // 4
    x = pre.data
    act = expit(x)
    act[..., 2 * hsz : 3 * hsz] = np.tanh(x[..., 2 * hsz : 3 * hsz])
    deriv = act * (1.0 - act)
    cand = act[..., 2 * hsz : 3 * hsz]
    deriv[..., 2 * hsz : 3 * hsz] = 1.0 - cand * cand
    return _result(act, (pre,), lambda g: (g * deriv,), "lstm_gates")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    binary = op in ("add", "sub", "mul")
    if binary != (b is not None):
        raise ContractError(f"{op} takes {'two operands' if binary else 'one operand'}")
    return fn(a, b) if binary else fn(a)


# -- reductions and structural ops ----------------------------------------------


def scale(a: Tensor, factor: float) -> Tensor:
    c = float(factor)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(
        np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),), "sum"
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis``; the axis is dropped from the result."""
    shape = a.shape
    if not 0 <= index < shape[axis]:
        raise DimensionError(f"take: index {index} out of range for axis {axis} of {shape}")
    out = np.take(a.data, index, axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)

    def backward_fn(g):
        full = np.zeros(shape)
        sel = [slice(None)] * len(shape)
        sel[axis] = index
        full[tuple(sel)] = g.reshape(full[tuple(sel)].shape)
        return (full,)

    return _result(out, (a,), backward_fn, "take")


def narrow(a: Tensor, start: int, stop: int, axis: int) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    shape = a.shape
    if not 0 <= start < stop <= shape[axis]:
        raise DimensionError(f"narrow: [{start}, {stop}) out of range for axis {axis} of {shape}")
    sel = [slice(None)] * len(shape)
    sel[axis] = slice(start, stop)
    sel = tuple(sel)

    def backward_fn(g):
        full = np.zeros(shape)
        full[sel] = g
        return (full,)

    return _result(a.data[sel], (a,), backward_fn, "narrow")


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    count = len(tensors)

    def backward_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(count))

    return _result(out, tuple(tensors), backward_fn, "stack")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# -- fused layer primitives -----------------------------------------------------


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, padding: int) -> Tensor:
    """Stride-1 cross-correlation of ``x`` [B, C_in, L] with ``weight`` [C_out, C_in, K]."""
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise DimensionError(f"conv1d: expected 3-D input and kernel, got {x.shape} and {weight.shape}")
    batch, in_ch, length = x.shape
    out_ch, w_in, k = weight.shape
    if w_in != in_ch:
        raise DimensionError(f"conv1d: input has {in_ch} channels, kernel expects {w_in} ({x.shape} vs {weight.shape})")
    if bias.shape != (out_ch,):
        raise DimensionError(f"conv1d: bias shape {bias.shape} does not match {out_ch} output channels")
    out_len = length + 2 * padding - k + 1
    if out_len < 1:
        raise DimensionError(f"conv1d: input length {length} too short for kernel {k} with padding {padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # cols[b, l, c, j] = xp[b, c, l + j]
    cols = sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3).reshape(batch, out_len, in_ch * k)
    wmat = weight.data.reshape(out_ch, in_ch * k)
    out = (cols @ wmat.T).transpose(0, 2, 1) + bias.data[None, :, None]

    def backward_fn(g):
        gt = g.transpose(0, 2, 1)  # [B, L', C_out]
        g_w = (gt.reshape(-1, out_ch).T @ cols.reshape(-1, in_ch * k)).reshape(weight.shape)
        g_b = g.sum(axis=(0, 2))
        g_cols = (gt @ wmat).reshape(batch, out_len, in_ch, k)
        g_xp = np.zeros_like(xp)
        for j in range(k):
            g_xp[:, :, j : j + out_len] += g_cols[:, :, :, j].transpose(0, 2, 1)
        g_x = g_xp[:, :, padding : padding + length] if padding else g_xp
        return g_x, g_w, g_b

    return _result(np.ascontiguousarray(out), (x, weight, bias), backward_fn, "conv1d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mean: np.ndarray | None,
    var: np.ndarray | None,
    eps: float,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Per-channel normalization of ``x`` [B, C, L].

    With ``mean``/``var`` given the statistics are fixed (inference); with
    both ``None`` they are the biased batch statistics over (batch, length).
    Returns the output and the statistics used.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"batch_norm expects [batch, channels, length], got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} vs {channels} channels")
    xd = x.data
    batch_stats = mean is None
    if batch_stats:
        count = xd.shape[0] * xd.shape[2]
        if count < 2:
            raise DegenerateBatchError(f"batch_norm in train mode needs >= 2 values per channel, got {count}")
        mean = xd.mean(axis=(0, 2))
        var = xd.var(axis=(0, 2))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None]) * inv_std[None, :, None]
    out = xhat * gamma.data[None, :, None] + beta.data[None, :, None]
    gd = gamma.data

    def backward_fn(g):
        g_gamma = (g * xhat).sum(axis=(0, 2))
        g_beta = g.sum(axis=(0, 2))
        g_xhat = g * gd[None, :, None]
        if batch_stats:
            m = xd.shape[0] * xd.shape[2]
            s1 = g_xhat.sum(axis=(0, 2), keepdims=True)
            s2 = (g_xhat * xhat).sum(axis=(0, 2), keepdims=True)
            g_x = (inv_std[None, :, None] / m) * (m * g_xhat - s1 - xhat * s2)
        else:
            g_x = g_xhat * inv_std[None, :, None]
        return g_x, g_gamma, g_beta

    return _result(out, (x, gamma, beta), backward_fn, "batch_norm"), mean, var
