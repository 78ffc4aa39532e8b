"""Layers used by the model zoo.

Every layer owns its parameters as :class:`Tensor` objects (``parameters()``
returns them by local name) and builds its forward pass from the
differentiable primitives in :mod:`resnls.autodiff`, so gradients come from
the tape.  Weights are drawn uniformly from ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, EmptySequenceError


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Layer:
    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class Conv1D(Layer):
    """Stride-1 1-D cross-correlation with symmetric zero padding.

    Padding defaults to ``(kernel_size - 1) // 2`` so the output keeps the
    input length.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 padding: int | None = None):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {kernel_size}", "kernel_size")
        self.kernels = _uniform(rng, (out_channels, in_channels, kernel_size), in_channels * kernel_size)
        self.bias = _zeros(out_channels)
        self.padding = (kernel_size - 1) // 2 if padding is None else padding

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    def parameters(self):
        return {"weight": self.kernels, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.kernels, self.bias, self.padding)


class BatchNorm1D(Layer):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = _zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if not training:
            out, _, _ = ad.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)
            return out
        out, mean, var = ad.batch_norm(x, self.gamma, self.beta, None, None, self.eps)
        m = self.momentum
        # in place so buffers() views stay valid
        self.running_mean *= 1.0 - m
        self.running_mean += m * mean
        self.running_var *= 1.0 - m
        self.running_var += m * var
        return out


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1/keep_prob`` in training."""

    def __init__(self, keep_prob: float, seed: int = 0):
        if not 0.0 < keep_prob <= 1.0:
            raise ConfigError(f"keep_prob must lie in (0, 1], got {keep_prob}", "dropout_keep")
        self.keep_prob = keep_prob
        self.reseed(seed)

    def reseed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if not training or self.keep_prob == 1.0:
            return x
        mask = (self.rng.random(x.shape) < self.keep_prob) / self.keep_prob
        return ad.mul(x, ad.constant(mask))


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (out_features, in_features), in_features)
        self.bias = _zeros(out_features)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise DimensionError(f"linear: input {x.shape} does not match weight {self.weight.shape}")
        return ad.add(ad.matmul(x, ad.transpose(self.weight)), self.bias)


GATES = ("i", "f", "g", "o")


class LSTMCell(Layer):
    """LSTM cell with separate input and hidden weights per gate.

    Gates are input ``i``, forget ``f``, candidate ``g`` and output ``o``.
    The forget-gate bias starts at 1, every other bias at 0.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_input = {k: _uniform(rng, (hidden_size, input_size), input_size) for k in GATES}
        self.w_hidden = {k: _uniform(rng, (hidden_size, hidden_size), hidden_size) for k in GATES}
        self.b = {k: _zeros(hidden_size) for k in GATES}
        self.b["f"].data[:] = 1.0

    def parameters(self):
        params = {}
        for k in GATES:
            params[f"W_i{k}"] = self.w_input[k]
        for k in GATES:
            params[f"W_h{k}"] = self.w_hidden[k]
        for k in GATES:
            params[f"b_{k}"] = self.b[k]
        return params

    def stacked(self) -> tuple[Tensor, Tensor, Tensor]:
        """Gate weights as ``[input, 4H]``, ``[H, 4H]`` and bias ``[4H]`` in i, f, g, o order."""
        wx = ad.transpose(ad.concat([self.w_input[k] for k in GATES], axis=0))
        wh = ad.transpose(ad.concat([self.w_hidden[k] for k in GATES], axis=0))
        b = ad.concat([self.b[k] for k in GATES], axis=0)
        return wx, wh, b

    def _check_state(self, h: Tensor, c: Tensor, batch: int) -> None:
        want = (batch, self.hidden_size)
        if h.shape != want or c.shape != want:
            raise DimensionError(f"lstm: state shapes {h.shape}/{c.shape}, expected {want}")

    def _gates_step(self, x_proj: Tensor, h_prev: Tensor, c_prev: Tensor, wh: Tensor):
        """One step given ``x_proj = x W_x + b``."""
        hsz = self.hidden_size
        act = ad.lstm_gates(ad.add(x_proj, ad.matmul(h_prev, wh)))
        i = ad.narrow(act, 0, hsz, axis=1)
        f = ad.narrow(act, hsz, 2 * hsz, axis=1)
        g = ad.narrow(act, 2 * hsz, 3 * hsz, axis=1)
        o = ad.narrow(act, 3 * hsz, 4 * hsz, axis=1)
        c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        return h, c

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        if x_t.data.ndim != 2 or x_t.shape[1] != self.input_size:
            raise DimensionError(f"lstm: input {x_t.shape}, expected [batch, {self.input_size}]")
        self._check_state(h_prev, c_prev, x_t.shape[0])
        wx, wh, b = self.stacked()
        return self._gates_step(ad.add(ad.matmul(x_t, wx), b), h_prev, c_prev, wh)


def _as_steps(xs: Tensor | Sequence[Tensor], input_size: int) -> tuple[Tensor, int, int]:
    """Validate a sequence input and return it as one [B, T, in] tensor."""
    if not isinstance(xs, Tensor):
        if len(xs) == 0:
            raise EmptySequenceError("recurrent layer needs at least one step")
        xs = ad.stack(list(xs), axis=1)
    if xs.data.ndim != 3 or xs.shape[2] != input_size:
        raise DimensionError(f"recurrent input {xs.shape}, expected [batch, steps, {input_size}]")
    return xs, xs.shape[0], xs.shape[1]


def lstm_step(cell: LSTMCell, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    return cell.step(x_t, h_prev, c_prev)


def lstm_sequence(
    cell: LSTMCell,
    xs: Tensor | Sequence[Tensor],
    h0: Tensor | None = None,
    c0: Tensor | None = None,
    reverse: bool = False,
) -> tuple[Tensor, Tensor, Tensor]:
    """Fold the cell over ``xs`` [B, T, in]; returns (all h [B, T, H], last h, last c).

    With ``reverse`` the steps are consumed last-to-first and the stacked
    hidden states follow processing order.
    """
    xs, batch, steps = _as_steps(xs, cell.input_size)
    hsz = cell.hidden_size
    h = h0 if h0 is not None else ad.constant(np.zeros((batch, hsz)))
    c = c0 if c0 is not None else ad.constant(np.zeros((batch, hsz)))
    cell._check_state(h, c, batch)

    wx, wh, b = cell.stacked()
    # input projections for every step in one product
    flat = ad.reshape(xs, (batch * steps, cell.input_size))
    proj = ad.reshape(ad.add(ad.matmul(flat, wx), b), (batch, steps, 4 * hsz))
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    hs = []
    for t in order:
        h, c = cell._gates_step(ad.take(proj, t, axis=1), h, c, wh)
        hs.append(h)
    return ad.stack(hs, axis=1), h, c


class RNNCell(Layer):
    """Elman recurrence ``h_t = tanh(W_ih x_t + W_hh h_{t-1} + b)``."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_ih = _uniform(rng, (hidden_size, input_size), input_size)
        self.w_hh = _uniform(rng, (hidden_size, hidden_size), hidden_size)
        self.b = _zeros(hidden_size)

    def parameters(self):
        return {"W_ih": self.w_ih, "W_hh": self.w_hh, "b": self.b}

    def step(self, x_t: Tensor, h_prev: Tensor) -> Tensor:
        if x_t.data.ndim != 2 or x_t.shape[1] != self.input_size:
            raise DimensionError(f"rnn: input {x_t.shape}, expected [batch, {self.input_size}]")
        if h_prev.shape != (x_t.shape[0], self.hidden_size):
            raise DimensionError(f"rnn: state {h_prev.shape}, expected {(x_t.shape[0], self.hidden_size)}")
        pre = ad.add(ad.matmul(x_t, ad.transpose(self.w_ih)), ad.matmul(h_prev, ad.transpose(self.w_hh)))
        return ad.tanh(ad.add(pre, self.b))


def rnn_step(cell: RNNCell, x_t: Tensor, h_prev: Tensor) -> Tensor:
    return cell.step(x_t, h_prev)


def rnn_sequence(cell: RNNCell, xs: Tensor | Sequence[Tensor], h0: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Fold the Elman cell over ``xs`` [B, T, in]; returns (all h, last h)."""
    xs, batch, steps = _as_steps(xs, cell.input_size)
    h = h0 if h0 is not None else ad.constant(np.zeros((batch, cell.hidden_size)))
    hs = []
    for t in range(steps):
        h = cell.step(ad.take(xs, t, axis=1), h)
        hs.append(h)
    return ad.stack(hs, axis=1), h
