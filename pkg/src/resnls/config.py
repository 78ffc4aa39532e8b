"""Run configuration: defaults < config file < ``RESNLS_*`` env vars < CLI flags.

The config file is flat ``key = value`` text.  ``#`` starts a comment,
values may be quoted (section headers are rejected), and each key has a fixed type (see ``RunConfig``).
Relative paths in a file resolve against the file's directory.

Example::

    # SSE Composite, 2021 held out
    data = sse.csv
    instrument = SSE
    train_start = 2011-01-01
    train_end = 2020-12-31
    test_start = 2021-01-01
    test_end = 2021-12-31
    window_n = 5
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields, replace
from datetime import date
from pathlib import Path
from typing import Mapping

from .backtest import StrategyConfig
from .data import DateRange
from .errors import ConfigError
from .models import ModelSpec
from .synthetic import BUNDLED_TEST, BUNDLED_TRAIN

ENV_PREFIX = "RESNLS_"
BUILTIN_SYNTHETIC = "builtin:synthetic"


@dataclass(frozen=True)
class RunConfig:
    # data
    data: str = BUILTIN_SYNTHETIC
    instrument: str = ""
    field: str = "close"
    train_start: date = BUNDLED_TRAIN.start
    train_end: date = BUNDLED_TRAIN.end
    test_start: date = BUNDLED_TEST.start
    test_end: date = BUNDLED_TEST.end
    # model
    arch: str = "resnls"
    window_n: int = 5
    conv_filters: int = 64
    kernel_size: int = 3
    lstm_hidden: int = 32
    dropout_keep: float = 0.8
    bn_after_each_conv: bool = False
    init_seed: int = 0
    # training
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    weight_decay: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_seed: int = 1
    # backtest
    threshold: float = 0.01
    initial_cash: float = 1_000_000.0
    execution_price: str = "next_open"
    # run
    out: str = "runs/default"
    model: str = ""
    sweep_windows: str = "3,5,10,20,40,60"
    workers: int = 1

    @property
    def train_range(self) -> DateRange:
        return DateRange(self.train_start, self.train_end)

    @property
    def test_range(self) -> DateRange:
        return DateRange(self.test_start, self.test_end)

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            architecture=self.arch, window_n=self.window_n, conv_filters=self.conv_filters,
            kernel_size=self.kernel_size, lstm_hidden=self.lstm_hidden, dropout_keep=self.dropout_keep,
            bn_after_each_conv=self.bn_after_each_conv, init_seed=self.init_seed,
        )

    @property
    def train_config(self):
        from .training import TrainConfig

        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
            weight_decay=self.weight_decay, adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps, shuffle_seed=self.shuffle_seed,
        )

    @property
    def strategy(self) -> StrategyConfig:
        return StrategyConfig(self.threshold, self.initial_cash, self.execution_price)

    @property
    def windows(self) -> list[int]:
        try:
            ns = sorted({int(v) for v in self.sweep_windows.split(",") if v.strip()})
        except ValueError:
            raise ConfigError(f"sweep_windows must be comma-separated integers, got {self.sweep_windows!r}",
                              "sweep_windows") from None
        if not ns:
            raise ConfigError("sweep_windows is empty", "sweep_windows")
        return ns

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else Path(self.out) / "model.resnls"

    def validate(self, need_data: bool = True) -> RunConfig:
        """Check everything that can be checked before any computation."""
        if need_data and self.data != BUILTIN_SYNTHETIC and not Path(self.data).is_file():
            raise ConfigError(f"data file not found: {self.data}", "data")
        if self.train_end < self.train_start:
            raise ConfigError("train_end precedes train_start", "train_end")
        if self.test_end < self.test_start:
            raise ConfigError("test_end precedes test_start", "test_end")
        if not self.train_end < self.test_start:
            raise ConfigError("train range must end before test range starts", "test_start")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", "workers")
        for seed_key in ("init_seed", "shuffle_seed"):
            if not 0 <= getattr(self, seed_key) < 2**64:
                raise ConfigError(f"{seed_key} must be an unsigned 64-bit integer", seed_key)
        self.model_spec.validate()
        self.train_config.validate()
        self.strategy.validate()
        self.windows
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, date):
                text = v.isoformat()
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    def snapshot(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.isoformat() if isinstance(v, date) else v
        return out


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_PATH_KEYS = ("data", "out", "model")


def coerce(key: str, raw: str):
    """Parse ``raw`` as the declared type of ``key``."""
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}", key)
    kind = _TYPES[key]
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "date":
            return date.fromisoformat(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}", key) from None


_SECTION = "run"


def parse_text(text: str, base_dir: Path | None = None, source: str = "<config>") -> dict:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), comment_prefixes=("#",), strict=True,
        delimiters=("=",),
    )
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}:{exc.lineno - 1}: duplicate key {exc.option!r}", exc.option) from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: expected flat 'key = value' lines ({exc.message.splitlines()[0]})") from None
    if parser.sections() != [_SECTION]:
        raise ConfigError(f"{source}: section headers are not allowed")
    values: dict = {}
    for key, raw in parser[_SECTION].items():
        val = coerce(key, raw)
        if key in _PATH_KEYS and base_dir is not None and val and val != BUILTIN_SYNTHETIC:
            p = Path(val)
            val = str(p if p.is_absolute() else base_dir / p)
        values[key] = val
    return values


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    values = {}
    for key in _TYPES:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            values[key] = coerce(key, environ[name])
    return values


def resolve(
    config_path: str | Path | None = None,
    overrides: Mapping[str, object] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    cfg = RunConfig()
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}", "config")
        cfg = replace(cfg, **parse_text(path.read_text(encoding="utf-8"), path.parent, str(path)))
    cfg = replace(cfg, **env_overrides(environ))
    if overrides:
        cfg = replace(cfg, **{k: (coerce(k, v) if isinstance(v, str) else v) for k, v in overrides.items()})
    return cfg
