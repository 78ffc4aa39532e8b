"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ContractError


@dataclass
class GradCheckEntry:
    name: str
    size: int
    rel_error: float
    checked: int = -1

    def __post_init__(self):
        if self.checked < 0:
            self.checked = self.size


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if not e.rel_error < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def extend(self, other: GradCheckReport, prefix: str = "") -> None:
        for e in other.entries:
            self.entries.append(GradCheckEntry(prefix + e.name, e.size, e.rel_error, e.checked))

    def format(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [f"{'parameter':<{width}}  {'size':>6}  {'checked':>7}  {'rel_err':>10}  status"]
        for e in self.entries:
            status = "ok" if e.rel_error < self.tol else "FAIL"
            lines.append(f"{e.name:<{width}}  {e.size:>6}  {e.checked:>7}  {e.rel_error:>10.3e}  {status}")
        return "\n".join(lines)


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise ContractError(f"grad_check: function must return a scalar, got shape {out.shape}")
    return out.item()


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor] | Mapping[str, Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    sample_seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` against central differences.

    ``inputs`` may be a sequence (entries named by position) or a name ->
    tensor mapping, in which case ``f`` is called with the tensors in mapping
    order.  Each entry's error is ``max|g_ad - g_fd| / max(1, max|g_fd|)``
    over the checked coordinates.  Every coordinate is checked unless
    ``max_entries`` is set, in which case larger tensors are checked on a
    seeded uniform sample of that many coordinates.
    Gradients already stored on the inputs are overwritten.
    """
    if max_entries is not None and max_entries < 1:
        raise ContractError(f"grad_check: max_entries must be >= 1, got {max_entries}")
    if isinstance(inputs, Mapping):
        names = list(inputs)
        tensors = list(inputs.values())
    else:
        tensors = list(inputs)
        names = [f"input{i}" for i in range(len(tensors))]

    first = _scalar(f(*tensors))
    second = _scalar(f(*tensors))
    if first != second:
        raise ContractError(
            f"grad_check: f is not deterministic ({first!r} != {second!r}); disable dropout"
        )

    for t in tensors:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = f(*tensors)
    tape.backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    sampler = np.random.default_rng(sample_seed)
    report = GradCheckReport(tol=tol)
    for name, t, g_ad in zip(names, tensors, analytic):
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(sampler.choice(flat.size, size=max_entries, replace=False))
        g_fd = np.empty(coords.size)
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            plus = _scalar(f(*tensors))
            flat[i] = orig - step
            minus = _scalar(f(*tensors))
            flat[i] = orig
            g_fd[j] = (plus - minus) / (2.0 * step)
        diff = np.max(np.abs(g_ad.reshape(-1)[coords] - g_fd))
        denom = max(1.0, float(np.max(np.abs(g_fd))))
        report.entries.append(GradCheckEntry(name, flat.size, float(diff / denom), coords.size))
    return report


# -- the standard suite -----------------------------------------------------------


def _projected(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(out * weights)``; a random projection keeps every output coordinate in play."""
    from . import autodiff as ad

    return ad.sum_all(ad.mul(out, ad.constant(weights)))


def layer_checks(seed: int = 0, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    from . import autodiff as ad
    from .layers import BatchNorm1D, Conv1D, Linear, LSTMCell, RNNCell, lstm_sequence, rnn_sequence

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)

    def run(group, layer_params, extra, f, out_shape):
        w = rng.normal(size=out_shape)
        inputs = {**{f"{group}.{k}": v for k, v in layer_params.items()}, **extra}
        report.extend(grad_check(lambda *_: _projected(f(), w), inputs, step, tol))

    conv = Conv1D(3, 4, 3, rng)
    x = Tensor(rng.normal(size=(2, 3, 7)))
    run("conv1d", conv.parameters(), {"conv1d.x": x}, lambda: conv(x), (2, 4, 7))

    bn = BatchNorm1D(3)
    bn.gamma.data[:] = rng.uniform(0.5, 1.5, 3)
    bn.beta.data[:] = rng.normal(size=3)
    xb = Tensor(rng.normal(size=(2, 3, 5)))
    run("batchnorm_train", bn.parameters(), {"batchnorm_train.x": xb}, lambda: bn(xb, True), (2, 3, 5))
    bn.running_mean[:] = rng.normal(size=3)
    bn.running_var[:] = rng.uniform(0.5, 2.0, 3)
    run("batchnorm_eval", bn.parameters(), {"batchnorm_eval.x": xb}, lambda: bn(xb, False), (2, 3, 5))

    lin = Linear(4, 3, rng)
    xl = Tensor(rng.normal(size=(5, 4)))
    run("linear", lin.parameters(), {"linear.x": xl}, lambda: lin(xl), (5, 3))

    cell = LSTMCell(2, 3, rng)
    xs = Tensor(rng.normal(size=(2, 5, 2)))
    h0 = Tensor(rng.normal(size=(2, 3)))
    c0 = Tensor(rng.normal(size=(2, 3)))
    run("lstm", cell.parameters(), {"lstm.x": xs, "lstm.h0": h0, "lstm.c0": c0},
        lambda: lstm_sequence(cell, xs, h0, c0)[0], (2, 5, 3))

    rcell = RNNCell(2, 3, rng)
    rh0 = Tensor(rng.normal(size=(2, 3)))
    run("rnn", rcell.parameters(), {"rnn.x": xs, "rnn.h0": rh0}, lambda: rnn_sequence(rcell, xs, rh0)[0], (2, 5, 3))

    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 2)))
    run("matmul", {}, {"matmul.a": a, "matmul.b": b}, lambda: ad.matmul(a, b), (3, 2))
    return report


SUITE_ARCHITECTURES = ("resnls", "cnn", "rnn", "lstm", "bilstm")
SUITE_MAX_ENTRIES = 512


def model_checks(
    architectures=SUITE_ARCHITECTURES,
    window_n: int = 5,
    batch: int = 3,
    seed: int = 0,
    step: float = 1e-5,
    tol: float = 1e-4,
    modes=("train",),
    max_entries: int | None = SUITE_MAX_ENTRIES,
) -> GradCheckReport:
    """Forward + MSE gradient check for each architecture.

    Train mode draws the dropout mask from a generator reseeded before every
    forward, so the function stays deterministic while exercising dropout and
    batch statistics.  Recurrent baselines have no mode-dependent layers and
    are checked once.  ``max_entries=None`` checks every coordinate.
    """
    from .models import ModelSpec, build
    from .training import mse_loss

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for arch in architectures:
        model = build(ModelSpec(architecture=arch, window_n=window_n, init_seed=seed))
        bn_layers = [l for name, l in model.layers.items() if name.startswith("bn")]
        for layer in bn_layers:
            layer.running_mean[:] = rng.normal(0, 0.1, layer.running_mean.shape)
            layer.running_var[:] = rng.uniform(0.5, 2.0, layer.running_var.shape)
        x = Tensor(rng.uniform(0, 1, (batch, window_n)))
        y = Tensor(rng.uniform(0, 1, (batch, 1)))
        arch_modes = modes if model.spec.uses_conv else modes[:1]
        for mode in arch_modes:
            snapshot = [(l.running_mean.copy(), l.running_var.copy()) for l in bn_layers]

            def f(*_):
                model.reseed_dropout(seed)
                return mse_loss(model.forward(x, mode), y)

            sub = grad_check(f, dict(model.parameters), step, tol, max_entries, sample_seed=seed)
            report.extend(sub, prefix=f"{arch}[{mode}].")
            for l, (m, v) in zip(bn_layers, snapshot):
                l.running_mean[:], l.running_var[:] = m, v
    return report


def run_suite(
    seed: int = 0, step: float = 1e-5, tol: float = 1e-4, max_entries: int | None = SUITE_MAX_ENTRIES
) -> GradCheckReport:
    """Every layer (all coordinates) and every architecture at n=5, batch 3."""
    report = GradCheckReport(tol=tol)
    report.extend(layer_checks(seed, step, tol))
    report.extend(model_checks(seed=seed, step=step, tol=tol, max_entries=max_entries))
    return report
