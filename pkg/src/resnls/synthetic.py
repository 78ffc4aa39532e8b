"""Seeded synthetic index series (sine plus noise) used as the bundled fixture."""

from __future__ import annotations

from datetime import date, timedelta
from importlib import resources

import numpy as np

from .data import DateRange, PriceSeries, ingest_csv

BUNDLED_NAME = "synthetic.csv"
BUNDLED_TRAIN = DateRange(date(2011, 1, 1), date(2019, 12, 31))
BUNDLED_TEST = DateRange(date(2020, 1, 1), date(2020, 12, 31))


def business_days(start: date, count: int) -> list[date]:
    days, d = [], start
    while len(days) < count:
        if d.weekday() < 5:
            days.append(d)
        d += timedelta(days=1)
    return days


def sine_series(
    length: int = 2600,
    seed: int = 20110103,
    level: float = 3000.0,
    amplitude: float = 250.0,
    period: float = 250.0,
    noise: float = 10.0,
    start: date = date(2011, 1, 3),
    instrument: str = "SYNTH",
) -> PriceSeries:
    """Closes ``level + amplitude*sin(2*pi*t/period) + N(0, noise)`` on business days.

    Opens sit near the previous close; highs and lows bracket open and close.
    Prices are rounded to cents so the series survives a CSV round trip.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    close = np.round(level + amplitude * np.sin(2 * np.pi * t / period) + rng.normal(0, noise, length), 2)
    gap = rng.normal(0, noise / 4, length)
    open_ = np.round(np.concatenate([[close[0]], close[:-1]]) + gap, 2)
    spread_hi = np.abs(rng.normal(0, noise / 2, length))
    spread_lo = np.abs(rng.normal(0, noise / 2, length))
    high = np.round(np.maximum(open_, close) + spread_hi, 2)
    low = np.round(np.minimum(open_, close) - spread_lo, 2)
    rows = zip(business_days(start, length), open_, high, low, close)
    return PriceSeries.from_rows([(d, float(o), float(h), float(l), float(c)) for d, o, h, l, c in rows], instrument)


def bundled_path():
    return resources.files("resnls.resources").joinpath(BUNDLED_NAME)


def load_bundled() -> PriceSeries:
    with resources.as_file(bundled_path()) as p:
        return ingest_csv(p, "SYNTH")
