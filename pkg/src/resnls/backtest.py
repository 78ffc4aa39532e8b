"""Threshold trading on next-day forecasts versus buy-and-hold.

Both strategies are all-in/all-out with fractional shares and no costs.
Orders decided at a day's close fill at the next trading day's open (or
close, with ``execution_price="next_close"``); the portfolio is marked to
market at every close.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping

from .data import PriceSeries
from .errors import ConfigError, DataError, DomainError, MissingForecastError

EXECUTION_PRICES = ("next_open", "next_close")


@dataclass(frozen=True)
class StrategyConfig:
    threshold: float = 0.01
    initial_cash: float = 1_000_000.0
    execution_price: str = "next_open"

    def validate(self) -> StrategyConfig:
        if not self.threshold > 0:
            raise ConfigError(f"threshold must be > 0, got {self.threshold}", "threshold")
        if not self.initial_cash > 0:
            raise ConfigError(f"initial_cash must be > 0, got {self.initial_cash}", "initial_cash")
        if self.execution_price not in EXECUTION_PRICES:
            raise ConfigError(
                f"execution_price must be one of {EXECUTION_PRICES}, got {self.execution_price!r}",
                "execution_price",
            )
        return self


def arr(v0: float, vn: float) -> float:
    """Percentage change of portfolio value from ``v0`` to ``vn``."""
    if not v0 > 0:
        raise DomainError(f"initial value must be positive, got {v0}")
    return (vn - v0) / v0 * 100


@dataclass
class PortfolioState:
    cash: float
    shares: float = 0.0

    def value(self, price: float) -> float:
        return self.cash + self.shares * price

    def buy_all(self, price: float) -> float:
        qty = self.cash / price
        self.shares, self.cash = qty, 0.0
        return qty

    def sell_all(self, price: float) -> float:
        qty = self.shares
        self.cash, self.shares = qty * price, 0.0
        return qty


@dataclass(frozen=True)
class Trade:
    date: date
    side: str
    price: float
    quantity: float
    value_before: float
    value_after: float


@dataclass(frozen=True)
class DayRecord:
    date: date
    close: float
    forecast: float | None
    action: str
    cash: float
    shares: float
    value: float
    arr: float


@dataclass
class BacktestResult:
    strategy: str
    initial_value: float
    days: list[DayRecord] = field(default_factory=list)
    trades: list[Trade] = field(default_factory=list)

    @property
    def final_value(self) -> float:
        return self.days[-1].value

    @property
    def final_arr(self) -> float:
        return self.days[-1].arr

    @property
    def arr_curve(self) -> list[float]:
        return [d.arr for d in self.days]


def _execution_price(series: PriceSeries, t: int, config: StrategyConfig) -> float:
    price = float(series.open[t] if config.execution_price == "next_open" else series.close[t])
    if not (math.isfinite(price) and price > 0):
        raise DataError(f"no usable {config.execution_price} price on {series.dates[t].isoformat()}")
    return price


def _simulate(series: PriceSeries, config: StrategyConfig, name: str, decide, forecasts=None) -> BacktestResult:
    config.validate()
    if len(series) < 2:
        raise DataError("backtest needs at least two trading days")
    state = PortfolioState(float(config.initial_cash))
    result = BacktestResult(name, state.cash)
    pending = decide(-1, state)
    for t, d in enumerate(series.dates):
        action = "hold"
        if pending is not None:
            price = _execution_price(series, t, config)
            before = state.value(price)
            qty = state.buy_all(price) if pending == "buy" else state.sell_all(price)
            result.trades.append(Trade(d, pending, price, qty, before, state.value(price)))
            action = pending
        close = float(series.close[t])
        value = state.value(close)
        forecast = forecasts.get(d) if forecasts is not None else None
        result.days.append(
            DayRecord(d, close, forecast, action, state.cash, state.shares, value, arr(config.initial_cash, value))
        )
        pending = decide(t, state) if t < len(series) - 1 else None
    return result


def run_benchmark(series: PriceSeries, config: StrategyConfig = StrategyConfig()) -> BacktestResult:
    """Buy with all cash at the first day's execution price and hold to the end."""

    def decide(t, state):
        return "buy" if t == -1 else None

    return _simulate(series, config, "benchmark", decide)


def run_prediction_strategy(
    series: PriceSeries,
    predictions: Mapping[date, float],
    config: StrategyConfig = StrategyConfig(),
) -> BacktestResult:
    """Trade on forecasts keyed by the date they forecast.

    At day ``t`` with close ``p`` and forecast ``f`` for day ``t+1``: buy with
    all cash if ``f > (1 + threshold) * p``, sell all shares if
    ``f < (1 - threshold) * p``, otherwise hold.
    """
    closes = series.close
    th = config.threshold
    for d in series.dates[1:]:
        if d not in predictions:
            raise MissingForecastError(f"no forecast for {d.isoformat()}")

    def decide(t, state):
        if t < 0:
            return None
        f = float(predictions[series.dates[t + 1]])
        p = float(closes[t])
        if f > (1 + th) * p and state.cash > 0:
            return "buy"
        if f < (1 - th) * p and state.shares > 0:
            return "sell"
        return None

    return _simulate(series, config, "prediction", decide, predictions)


def write_daily_csv(pred: BacktestResult, bench: BacktestResult, path: str | Path) -> None:
    """``date,close,forecast,action,cash,shares,value,arr_pred,arr_bench`` for the prediction strategy."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "close", "forecast", "action", "cash", "shares", "value", "arr_pred", "arr_bench"])
        for p, b in zip(pred.days, bench.days):
            w.writerow([
                p.date.isoformat(), repr(p.close), "" if p.forecast is None else repr(float(p.forecast)),
                p.action, repr(p.cash), repr(p.shares), repr(p.value), repr(p.arr), repr(b.arr),
            ])


def write_trades_csv(results: list[BacktestResult], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "date", "side", "price", "quantity"])
        for r in results:
            for tr in r.trades:
                w.writerow([r.strategy, tr.date.isoformat(), tr.side, repr(tr.price), repr(tr.quantity)])
