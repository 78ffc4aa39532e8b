from datetime import date

import numpy as np
import pytest
from hypothesis import settings

from resnls.data import PriceSeries
from resnls.synthetic import business_days, load_bundled

settings.register_profile("default", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("default")


def make_series(closes, opens=None, start=date(2020, 1, 6), instrument="TEST") -> PriceSeries:
    """OHLC series on business days; highs and lows hug open/close."""
    closes = [float(c) for c in closes]
    opens = closes[:1] + closes[:-1] if opens is None else [float(o) for o in opens]
    rows = [
        (d, o, max(o, c), min(o, c), c)
        for d, o, c in zip(business_days(start, len(closes)), opens, closes)
    ]
    return PriceSeries.from_rows(rows, instrument)


@pytest.fixture(scope="session")
def bundled():
    return load_bundled()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
