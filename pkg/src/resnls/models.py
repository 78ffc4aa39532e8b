"""ResNLS and the vanilla baselines, plus the model file format.

ResNLS forward pass for a batch of windows ``x`` [B, n]::

    r = Linear(flatten(Dropout(BN(relu(conv2(relu(conv1(x))))))))   # [B, n]
    z = x + r
    y = Linear(LSTM(z as n steps of 1 feature).last_hidden)          # [B, 1]

The baselines reuse the same parameter names for shared pieces (``lstm.*``,
``head.*``), so weights can be copied between architectures.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Normalizer
from .errors import (
    ChecksumError,
    ConfigError,
    DimensionError,
    ModelLoadError,
    TruncatedModelError,
    VersionMismatchError,
)
from .layers import BatchNorm1D, Conv1D, Dropout, Layer, Linear, LSTMCell, RNNCell, lstm_sequence, rnn_sequence

ARCHITECTURES = ("resnls", "cnn", "rnn", "lstm", "bilstm")
SWEEP_WINDOWS = (3, 5, 10, 20, 40, 60)
MODES = ("train", "eval")

SCHEMA_VERSION = 1
MAGIC = b"RESNLS-MODEL"


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "resnls"
    window_n: int = 5
    conv_filters: int = 64
    kernel_size: int = 3
    lstm_hidden: int = 32
    dropout_keep: float = 0.8
    bn_after_each_conv: bool = False
    init_seed: int = 0

    def validate(self) -> ModelSpec:
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}", "architecture")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}", "kernel_size")
        min_n = self.kernel_size if self.uses_conv else 1
        if self.window_n < min_n:
            raise ConfigError(f"window_n must be >= {min_n}, got {self.window_n}", "window_n")
        if self.conv_filters < 1:
            raise ConfigError(f"conv_filters must be >= 1, got {self.conv_filters}", "conv_filters")
        if self.lstm_hidden < 1:
            raise ConfigError(f"lstm_hidden must be >= 1, got {self.lstm_hidden}", "lstm_hidden")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout_keep must lie in (0, 1], got {self.dropout_keep}", "dropout_keep")
        if not 0 <= self.init_seed < 2**64:
            raise ConfigError(f"init_seed must be an unsigned 64-bit integer, got {self.init_seed}", "init_seed")
        return self

    @property
    def uses_conv(self) -> bool:
        return self.architecture in ("resnls", "cnn")

    @property
    def label(self) -> str:
        return f"ResNLS-{self.window_n}" if self.architecture == "resnls" else self.architecture.upper()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model spec fields {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class TrainedModel:
    spec: ModelSpec
    layers: dict[str, Layer]
    normalizer: Normalizer | None = None
    fingerprint: dict = field(default_factory=dict)

    def __getattr__(self, name):
        layers = self.__dict__.get("layers", {})
        if name in layers:
            return layers[name]
        raise AttributeError(name)

    @property
    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, t in layer.parameters().items():
                out[f"{lname}.{pname}"] = t
        return out

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            for bname, arr in layer.buffers().items():
                out[f"{lname}.{bname}"] = arr
        return out

    @property
    def decayed_parameters(self) -> tuple[str, ...]:
        """Names of the convolution kernels, the only weights under weight decay."""
        return tuple(
            f"{lname}.weight" for lname, layer in self.layers.items() if isinstance(layer, Conv1D)
        )

    def zero_grad(self) -> None:
        for t in self.parameters.values():
            t.zero_grad()

    def reseed_dropout(self, seed: int) -> None:
        for layer in self.layers.values():
            if isinstance(layer, Dropout):
                layer.reseed(seed)

    def forward(self, x: Tensor, mode: str = "eval") -> Tensor:
        if self.spec.architecture == "resnls":
            return forward_resnls(self, x, mode)
        return forward_baseline(self, x, mode)

    def predict(self, inputs) -> np.ndarray:
        """Eval-mode predictions for ``inputs`` [N, n] on the normalized scale; returns [N, 1]."""
        x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
        return self.forward(x, "eval").data


def build(spec: ModelSpec) -> TrainedModel:
    """Allocate every layer of ``spec.architecture``, drawing weights from ``init_seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.init_seed)
    n, filters, k, hidden = spec.window_n, spec.conv_filters, spec.kernel_size, spec.lstm_hidden
    layers: dict[str, Layer] = {}
    arch = spec.architecture
    if spec.uses_conv:
        layers["conv1"] = Conv1D(1, filters, k, rng)
        if spec.bn_after_each_conv:
            layers["bn1"] = BatchNorm1D(filters)
        layers["conv2"] = Conv1D(filters, filters, k, rng)
        layers["bn"] = BatchNorm1D(filters)
        layers["dropout"] = Dropout(spec.dropout_keep, seed=spec.init_seed)
    if arch == "resnls":
        layers["proj"] = Linear(filters * n, n, rng)
    if arch in ("resnls", "lstm", "bilstm"):
        layers["lstm"] = LSTMCell(1, hidden, rng)
    if arch == "bilstm":
        layers["lstm_rev"] = LSTMCell(1, hidden, rng)
    if arch == "rnn":
        layers["rnn"] = RNNCell(1, hidden, rng)

    head_in = {"resnls": hidden, "lstm": hidden, "rnn": hidden, "bilstm": 2 * hidden, "cnn": filters * n}[arch]
    layers["head"] = Linear(head_in, 1, rng)
    return TrainedModel(spec, layers)


def _check_input(model: TrainedModel, x: Tensor, mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}", "mode")
    n = model.spec.window_n
    if x.data.ndim != 2 or x.shape[1] != n:
        raise DimensionError(f"expected input [batch, {n}], got {x.shape}")


def _conv_features(model: TrainedModel, x: Tensor, training: bool) -> Tensor:
    batch, n = x.shape
    h = ad.relu(model.conv1(ad.reshape(x, (batch, 1, n))))
    if model.spec.bn_after_each_conv:
        h = model.bn1(h, training)
    h = ad.relu(model.conv2(h))
    h = model.bn(h, training)
    h = model.dropout(h, training)
    return ad.reshape(h, (batch, h.shape[1] * n))


def _as_sequence(x: Tensor) -> Tensor:
    batch, n = x.shape
    return ad.reshape(x, (batch, n, 1))


def forward_resnls(model: TrainedModel, x: Tensor, mode: str = "eval") -> Tensor:
    _check_input(model, x, mode)
    residual = model.proj(_conv_features(model, x, mode == "train"))
    z = ad.add(x, residual)
    _, h_last, _ = lstm_sequence(model.lstm, _as_sequence(z))
    return model.head(h_last)


def forward_baseline(model: TrainedModel, x: Tensor, mode: str = "eval") -> Tensor:
    _check_input(model, x, mode)
    arch = model.spec.architecture
    if arch == "cnn":
        return model.head(_conv_features(model, x, mode == "train"))
    seq = _as_sequence(x)
    if arch == "lstm":
        _, h_last, _ = lstm_sequence(model.lstm, seq)
        return model.head(h_last)
    if arch == "rnn":
        _, h_last = rnn_sequence(model.rnn, seq)
        return model.head(h_last)
    if arch == "bilstm":
        _, h_fwd, _ = lstm_sequence(model.lstm, seq)
        _, h_bwd, _ = lstm_sequence(model.lstm_rev, seq, reverse=True)
        return model.head(ad.concat([h_fwd, h_bwd], axis=1))
    raise ConfigError(f"{arch!r} is not a baseline architecture", "architecture")


# -- model file -----------------------------------------------------------------
#
# Layout: MAGIC b" " version b"\n" header_len b"\n" header_json b"\n" blob
# The header lists every array with shape, byte offset and kind; the blob is
# little-endian float64 in manifest order; checksum is sha256 of the blob.


def _manifest(model: TrainedModel) -> list[tuple[str, str, np.ndarray]]:
    entries = [(name, "param", t.data) for name, t in model.parameters.items()]
    entries += [(name, "buffer", arr) for name, arr in model.buffers.items()]
    return entries


def dumps(model: TrainedModel) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, kind, arr in _manifest(model):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "schema_version": SCHEMA_VERSION,
        "spec": model.spec.to_dict(),
        "normalizer": model.normalizer.to_dict() if model.normalizer else None,
        "fingerprint": model.fingerprint,
        "manifest": manifest,
        "blob_nbytes": len(blob),
        "checksum": "sha256:" + hashlib.sha256(blob).hexdigest(),
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + b" %d\n%d\n" % (SCHEMA_VERSION, len(text)) + text + b"\n" + blob


def save(model: TrainedModel, path: str | Path) -> str:
    """Write ``model`` to ``path``; returns the sha256 of the file."""
    payload = dumps(model)
    Path(path).write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def loads(payload: bytes) -> TrainedModel:
    try:
        magic_line, rest = payload.split(b"\n", 1)
        magic, version = magic_line.split(b" ")
        if magic != MAGIC:
            raise ModelLoadError("not a ResNLS model file")
        version = int(version)
    except ValueError:
        raise ModelLoadError("not a ResNLS model file") from None
    if version != SCHEMA_VERSION:
        raise VersionMismatchError(f"model schema version {version}, this build reads {SCHEMA_VERSION}")
    try:
        len_line, rest = rest.split(b"\n", 1)
        header_len = int(len_line)
    except ValueError:
        raise TruncatedModelError("model file truncated inside the header") from None
    if len(rest) < header_len + 1:
        raise TruncatedModelError("model file truncated inside the header")
    header = json.loads(rest[:header_len].decode("utf-8"))
    blob = rest[header_len + 1 :]
    if len(blob) != header["blob_nbytes"]:
        raise TruncatedModelError(
            f"parameter blob is {len(blob)} bytes, manifest expects {header['blob_nbytes']}"
        )
    if "sha256:" + hashlib.sha256(blob).hexdigest() != header["checksum"]:
        raise ChecksumError("parameter blob checksum mismatch")

    model = build(ModelSpec.from_dict(header["spec"]))
    params, buffers = model.parameters, model.buffers
    expected = {name: kind for name, kind, _ in _manifest(model)}
    listed = {e["name"]: e["kind"] for e in header["manifest"]}
    if listed != expected:
        raise ModelLoadError(f"manifest does not match the {model.spec.architecture} schema")
    for e in header["manifest"]:
        arr = np.frombuffer(blob, dtype="<f8", count=e["nbytes"] // 8, offset=e["offset"]).reshape(e["shape"])
        target = params[e["name"]].data if e["kind"] == "param" else buffers[e["name"]]
        if target.shape != arr.shape:
            raise ModelLoadError(f"{e['name']}: shape {arr.shape}, schema expects {target.shape}")
        target[...] = arr
    if header["normalizer"] is not None:
        model.normalizer = Normalizer.from_dict(header["normalizer"])
    model.fingerprint = header["fingerprint"]
    return model


def load(path: str | Path) -> TrainedModel:
    return loads(Path(path).read_bytes())


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
