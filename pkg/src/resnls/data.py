"""OHLC ingestion, min-max scaling and sliding-window datasets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .autodiff import Tensor
from .errors import (
    ConfigError,
    DataError,
    DegenerateRangeError,
    DuplicateDateError,
    MalformedRowError,
    NonPositivePriceError,
    OHLCOrderError,
)

CSV_HEADER = ("date", "open", "high", "low", "close")
FIELDS = ("open", "high", "low", "close")


class DateRange(NamedTuple):
    """Inclusive calendar interval."""

    start: date
    end: date

    @classmethod
    def parse(cls, start: str | date, end: str | date) -> DateRange:
        s = start if isinstance(start, date) else date.fromisoformat(start)
        e = end if isinstance(end, date) else date.fromisoformat(end)
        if e < s:
            raise ConfigError(f"date range ends before it starts: {s} > {e}")
        return cls(s, e)

    def __str__(self) -> str:
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True, eq=False)
class PriceSeries:
    instrument: str
    dates: tuple[date, ...]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray

    def __len__(self) -> int:
        return len(self.dates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PriceSeries):
            return NotImplemented
        return (
            self.instrument == other.instrument
            and self.dates == other.dates
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in FIELDS)
        )

    def field(self, name: str) -> np.ndarray:
        if name not in FIELDS:
            raise ConfigError(f"unknown price field {name!r}", "field")
        return getattr(self, name)

    def span(self, rng: DateRange) -> tuple[int, int]:
        """Half-open index interval of the trading days inside ``rng``."""
        lo = int(np.searchsorted(self._ordinals, rng.start.toordinal(), side="left"))
        hi = int(np.searchsorted(self._ordinals, rng.end.toordinal(), side="right"))
        return lo, hi

    def slice(self, lo: int, hi: int) -> PriceSeries:
        return PriceSeries(
            self.instrument, self.dates[lo:hi],
            self.open[lo:hi], self.high[lo:hi], self.low[lo:hi], self.close[lo:hi],
        )

    def restrict(self, rng: DateRange) -> PriceSeries:
        return self.slice(*self.span(rng))

    @property
    def _ordinals(self) -> np.ndarray:
        return np.fromiter((d.toordinal() for d in self.dates), dtype=np.int64, count=len(self.dates))

    @classmethod
    def from_rows(cls, rows, instrument: str = "") -> PriceSeries:
        """Build and validate from ``(date, open, high, low, close)`` tuples in any order."""
        rows = sorted(rows, key=lambda r: r[0])
        for prev, cur in zip(rows, rows[1:]):
            if prev[0] == cur[0]:
                raise DuplicateDateError(f"duplicate date {cur[0].isoformat()}")
        for d, o, h, l, c in rows:
            if min(o, h, l, c) <= 0:
                raise NonPositivePriceError(f"non-positive price on {d.isoformat()}")
            if not (l <= min(o, c) and max(o, c) <= h):
                raise OHLCOrderError(
                    f"OHLC ordering violated on {d.isoformat()}: open={o} high={h} low={l} close={c}"
                )
        cols = list(zip(*rows)) if rows else [(), (), (), (), ()]
        arrays = [np.asarray(col, dtype=np.float64) for col in cols[1:]]
        return cls(instrument, tuple(cols[0]), *arrays)


def ingest_csv(path: str | Path, instrument: str | None = None) -> PriceSeries:
    """Read a ``date,open,high,low,close`` file, sort it by date and validate it."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedRowError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}", row=1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 5:
                raise MalformedRowError(f"{path}: row {lineno} has {len(rec)} fields, expected 5", row=lineno)
            try:
                d = date.fromisoformat(rec[0].strip())
                prices = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise MalformedRowError(f"{path}: row {lineno}: {exc}", row=lineno) from None
            if not all(math.isfinite(p) for p in prices):
                raise MalformedRowError(f"{path}: row {lineno} has a non-finite price", row=lineno)
            rows.append((d, *prices))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return PriceSeries.from_rows(rows, instrument or path.stem)


def write_csv(series: PriceSeries, path: str | Path, decimals: int | None = None) -> None:
    fmt = (lambda v: f"{v:.{decimals}f}") if decimals is not None else repr
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, d in enumerate(series.dates):
            w.writerow([d.isoformat()] + [fmt(float(series.field(f)[i])) for f in FIELDS])


@dataclass(frozen=True)
class Normalizer:
    """Affine map of prices onto [0, 1] using a fitted minimum and maximum."""

    min: float
    max: float
    fitted_on: DateRange | None = None

    def __post_init__(self):
        if not self.max > self.min:
            raise DegenerateRangeError(f"normalizer needs max > min, got min={self.min} max={self.max}")

    @property
    def width(self) -> float:
        return self.max - self.min

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.min) / self.width

    def inverse(self, y):
        return np.asarray(y, dtype=np.float64) * self.width + self.min

    def to_dict(self) -> dict:
        fitted = None
        if self.fitted_on is not None:
            fitted = [self.fitted_on.start.isoformat(), self.fitted_on.end.isoformat()]
        return {"min": self.min, "max": self.max, "fitted_on": fitted}

    @classmethod
    def from_dict(cls, d: dict) -> Normalizer:
        fitted = DateRange.parse(*d["fitted_on"]) if d.get("fitted_on") else None
        return cls(float(d["min"]), float(d["max"]), fitted)


def fit_normalizer(series: PriceSeries, field: str, rng: DateRange) -> Normalizer:
    lo, hi = series.span(rng)
    values = series.field(field)[lo:hi]
    if values.size == 0:
        raise DataError(f"no trading days in {rng}")
    vmin, vmax = float(values.min()), float(values.max())
    if not vmax > vmin:
        raise DegenerateRangeError(f"{field} is constant ({vmin}) over {rng}; cannot normalize")
    return Normalizer(vmin, vmax, rng)


@dataclass
class WindowedDataset:
    """Rows of ``n`` consecutive normalized values and the value that follows.

    ``target_dates[i]`` is the trading day whose value row ``i`` predicts;
    ``start_dates[i]`` is the first day of its input window.
    """

    inputs: Tensor
    targets: Tensor
    window_n: int
    target_dates: tuple[date, ...]
    start_dates: tuple[date, ...]
    normalizer: Normalizer | None = None
    field: str = "close"

    def __len__(self) -> int:
        return len(self.target_dates)


def _windows(series: PriceSeries, field: str, normalizer: Normalizer, n: int, lo: int, hi: int) -> WindowedDataset:
    if n < 1:
        raise ConfigError(f"window length must be >= 1, got {n}", "window_n")
    count = hi - lo
    if count < n + 1:
        raise DataError(f"need at least {n + 1} trading days for windows of {n}, got {count}")
    values = normalizer.transform(series.field(field)[lo:hi])
    strided = np.lib.stride_tricks.sliding_window_view(values, n + 1)
    return WindowedDataset(
        inputs=Tensor(strided[:, :n]),
        targets=Tensor(strided[:, n:]),
        window_n=n,
        target_dates=series.dates[lo + n : hi],
        start_dates=series.dates[lo : hi - n],
        normalizer=normalizer,
        field=field,
    )


def make_windows(series: PriceSeries, field: str, normalizer: Normalizer, n: int,
                 rng: DateRange | None = None) -> WindowedDataset:
    """Stride-1 windows over the trading days in ``rng`` (whole series when omitted)."""
    lo, hi = series.span(rng) if rng is not None else (0, len(series))
    return _windows(series, field, normalizer, n, lo, hi)


@dataclass
class Split:
    train: WindowedDataset
    test: WindowedDataset
    normalizer: Normalizer
    train_range: DateRange
    test_range: DateRange
    test_days: tuple[date, ...] = field(default=())


def split(series: PriceSeries, train_range: DateRange, test_range: DateRange, n: int,
          field: str = "close") -> Split:
    """Train/test windows sharing a normalizer fitted on the training range.

    Test windows are walk-forward: the first ``n`` test days take their input
    history from the trading days just before the test range, so each test
    day gets a prediction whenever that much history exists.
    """
    if not train_range.end < test_range.start:
        raise ConfigError(f"train range {train_range} must end before test range {test_range} starts")
    normalizer = fit_normalizer(series, field, train_range)
    train = make_windows(series, field, normalizer, n, train_range)
    lo, hi = series.span(test_range)
    if hi <= lo:
        raise DataError(f"no trading days in test range {test_range}")
    test = _windows(series, field, normalizer, n, max(0, lo - n), hi)
    return Split(train, test, normalizer, train_range, test_range, series.dates[lo:hi])
