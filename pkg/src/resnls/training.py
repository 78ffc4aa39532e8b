"""MSE loss, Adam with decoupled weight decay, and the mini-batch training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import WindowedDataset
from .errors import ConfigError, ContractError, DimensionError, DivergenceError, EmptyDatasetError
from .models import TrainedModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    weight_decay: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_seed: int = 0

    def validate(self) -> TrainConfig:
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}", "learning_rate")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}", "batch_size")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}", "epochs")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}", "weight_decay")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)", "adam_beta1")
        if not self.adam_eps > 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}", "adam_eps")
        return self


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = ad.sub(pred, target)
    return ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / diff.size)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    config: TrainConfig,
    decayed: tuple[str, ...] | frozenset[str] = (),
) -> None:
    """One Adam update of ``params`` in place from their ``.grad`` buffers.

    Parameters named in ``decayed`` are first shrunk by ``lr * weight_decay``
    (decoupled decay), then all parameters take the bias-corrected step.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for parameter {missing[0]!r}")
    lr, b1, b2 = config.learning_rate, config.adam_beta1, config.adam_beta2
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if name in decayed and config.weight_decay:
            p.data -= lr * config.weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)


@dataclass
class LossCurve:
    train_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_mse)

    def rows(self):
        for epoch, (tr, te) in enumerate(zip(self.train_mse, self.test_mse)):
            yield epoch, tr, te

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "test_mse"])
            for epoch, tr, te in self.rows():
                w.writerow([epoch, repr(tr), repr(te)])


def eval_mse(model: TrainedModel, data: WindowedDataset) -> float:
    pred = model.forward(data.inputs, "eval")
    return mse_loss(pred, data.targets).item()


def train(
    model: TrainedModel,
    data: tuple[WindowedDataset, WindowedDataset],
    config: TrainConfig = TrainConfig(),
) -> tuple[TrainedModel, LossCurve]:
    """Train ``model`` in place on ``data[0]``; returns it with the per-epoch loss curve.

    Each epoch shuffles the training windows, steps over mini-batches (the
    trailing partial batch included), then records eval-mode MSE on the full
    train and test sets.  Results depend only on the model's init seed,
    ``config.shuffle_seed`` and the data.
    """
    config.validate()
    train_ds, test_ds = data
    if len(train_ds) == 0 or len(test_ds) == 0:
        raise EmptyDatasetError("training needs non-empty train and test sets")
    n = model.spec.window_n
    for ds in (train_ds, test_ds):
        if ds.window_n != n:
            raise DimensionError(f"dataset windows of {ds.window_n}, model expects {n}")

    params = model.parameters
    decayed = frozenset(model.decayed_parameters)
    state = AdamState()
    rng = np.random.default_rng(config.shuffle_seed)
    model.reseed_dropout(config.shuffle_seed)
    x_all, y_all = train_ds.inputs.data, train_ds.targets.data
    count = len(train_ds)
    curve = LossCurve()

    for epoch in range(config.epochs):
        order = rng.permutation(count)
        for batch_no, start in enumerate(range(0, count, config.batch_size)):
            idx = order[start : start + config.batch_size]
            model.zero_grad()
            with Tape() as tape:
                pred = model.forward(Tensor(x_all[idx]), "train")
                loss = mse_loss(pred, Tensor(y_all[idx]))
            if not math.isfinite(loss.item()):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} batch {batch_no}", epoch=epoch, batch=batch_no
                )
            tape.backward(loss)
            adam_step(state, params, config, decayed)
        model.zero_grad()
        curve.train_mse.append(eval_mse(model, train_ds))
        curve.test_mse.append(eval_mse(model, test_ds))
        if not math.isfinite(curve.train_mse[-1]):
            raise DivergenceError(f"non-finite train MSE after epoch {epoch}", epoch=epoch)
        log.debug("epoch %d train %.6g test %.6g", epoch, curve.train_mse[-1], curve.test_mse[-1])

    model.fingerprint = {
        "init_seed": model.spec.init_seed,
        "shuffle_seed": config.shuffle_seed,
        "epochs": config.epochs,
        "train_config": asdict(config),
        "final_train_mse": curve.train_mse[-1],
        "final_test_mse": curve.test_mse[-1],
    }
    return model, curve
