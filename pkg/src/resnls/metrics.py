"""MAE / MSE / RMSE in price units, and model ranking tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import WindowedDataset
from .errors import ContractError, EmptyDatasetError


@dataclass
class MetricsReport:
    mae: float
    mse: float
    rmse: float
    n_test: int
    residuals: np.ndarray = field(repr=False)
    dates: tuple[date, ...] = field(default=(), repr=False)


def report_from_residuals(residuals: Iterable[float], dates: Sequence[date] = ()) -> MetricsReport:
    """Aggregate residuals ``actual - predicted``.

    Sums are exactly rounded (``math.fsum``), so the result does not depend
    on the order of the residuals.
    """
    r = np.asarray(list(residuals) if not isinstance(residuals, np.ndarray) else residuals, dtype=np.float64)
    if r.size == 0:
        raise EmptyDatasetError("cannot compute metrics on an empty test set")
    n = r.size
    a = np.abs(r)
    mae = math.fsum(a) / n
    mse = math.fsum(r * r) / n
    # scaled so squaring cannot underflow or overflow
    peak = float(a.max())
    rmse = peak * math.sqrt(math.fsum((a / peak) ** 2) / n) if peak > 0 else 0.0
    return MetricsReport(mae, mse, rmse, n, r, tuple(dates))


def predict_prices(model, test: WindowedDataset) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode predictions and targets for ``test``, mapped back to price units."""
    if len(test) == 0:
        raise EmptyDatasetError("test set is empty")
    norm = model.normalizer
    if norm is None:
        raise ContractError("model has no fitted normalizer")
    pred = np.asarray(model.predict(test.inputs)).reshape(-1)
    actual = test.targets.data.reshape(-1)
    return norm.inverse(actual), norm.inverse(pred)


def evaluate(model, test: WindowedDataset) -> MetricsReport:
    """Score ``model`` on ``test`` in price units using the model's own normalizer."""
    actual, pred = predict_prices(model, test)
    return report_from_residuals(actual - pred, test.target_dates)


@dataclass(frozen=True)
class RankRow:
    model: str
    mae: float
    mse: float
    rmse: float
    n_test: int


def compare(reports: Mapping[str, MetricsReport] | Sequence[tuple[str, MetricsReport]]) -> list[RankRow]:
    """Rank reports by RMSE, ties broken by MAE and then by name."""
    items = list(reports.items()) if isinstance(reports, Mapping) else list(reports)
    if len(items) < 2:
        raise ContractError(f"compare needs at least two reports, got {len(items)}")
    rows = [RankRow(name, r.mae, r.mse, r.rmse, r.n_test) for name, r in items]
    return sorted(rows, key=lambda row: (row.rmse, row.mae, row.model))


def format_table(rows: Sequence[RankRow]) -> str:
    width = max([len(r.model) for r in rows] + [5])
    lines = [f"{'Model':<{width}}  {'MAE':>10}  {'MSE':>12}  {'RMSE':>10}"]
    for r in rows:
        lines.append(f"{r.model:<{width}}  {r.mae:>10.2f}  {r.mse:>12.2f}  {r.rmse:>10.2f}")
    return "\n".join(lines)


def write_csv(rows: Sequence[RankRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mae", "mse", "rmse", "n_test"])
        for r in rows:
            w.writerow([r.model, repr(r.mae), repr(r.mse), repr(r.rmse), r.n_test])
