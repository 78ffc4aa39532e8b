import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from resnls.data import Normalizer, make_windows
from resnls.errors import ContractError, EmptyDatasetError
from resnls.metrics import RankRow, compare, evaluate, format_table, report_from_residuals, write_csv

from conftest import make_series


def exact_metrics(residuals):
    """MAE and MSE in exact rational arithmetic."""
    rs = [Fraction(float(r)) for r in residuals]
    n = len(rs)
    return float(sum(abs(r) for r in rs) / n), float(sum(r * r for r in rs) / n)


def test_hand_examples():
    r = report_from_residuals([3.0, -4.0])
    assert (r.mae, r.mse, r.n_test) == (3.5, 12.5, 2)
    assert r.rmse == pytest.approx(3.5355339059327378, rel=1e-15)
    zero = report_from_residuals(np.zeros(10))
    assert zero.mae == zero.mse == zero.rmse == 0.0


def test_empty_residuals():
    with pytest.raises(EmptyDatasetError):
        report_from_residuals([])


def test_random_residuals_against_exact_oracle(rng):
    for _ in range(50):
        res = rng.normal(0, rng.uniform(1, 100), size=100)
        r = report_from_residuals(res)
        mae, mse = exact_metrics(res)
        assert abs(r.mae - mae) <= 1e-12 * mae
        assert abs(r.mse - mse) <= 1e-12 * mse
        assert abs(r.rmse - math.sqrt(mse)) <= 1e-12 * r.rmse


@given(st.lists(st.floats(-1e150, 1e150), min_size=1, max_size=60), st.randoms(use_true_random=False))
def test_order_invariance_and_bounds(values, shuffler):
    r = report_from_residuals(values)
    shuffled = list(values)
    shuffler.shuffle(shuffled)
    s = report_from_residuals(shuffled)
    assert (r.mae, r.mse, r.rmse) == (s.mae, s.mse, s.rmse)
    assert r.mae <= r.rmse * (1 + 1e-15)


def test_compare_ranks_by_rmse():
    reports = {"LSTM": report_from_residuals([57.63]), "ResNLS-5": report_from_residuals([36.74])}
    rows = compare(reports)
    assert [r.model for r in rows] == ["ResNLS-5", "LSTM"]
    assert rows[0].rmse == 36.74
    with pytest.raises(ContractError):
        compare({"only": report_from_residuals([1.0])})


def test_compare_ties_break_on_mae_then_name():
    a = report_from_residuals([1.0, -1.0, 1.0, -1.0])  # mae 1, rmse 1
    b = report_from_residuals([1.0, 1.0, 1.0, 1.0])
    c = report_from_residuals([0.0, 0.0, 0.0, 2.0])  # mae 0.5, rmse 1
    rows = compare([("b", b), ("a", a), ("c", c)])
    assert [r.model for r in rows] == ["c", "a", "b"]


def test_table_and_csv(tmp_path):
    rows = [RankRow("ResNLS-5", 28.08, 1350.16, 36.74, 242), RankRow("LSTM", 47.57, 3320.77, 57.63, 242)]
    text = format_table(rows)
    assert text.splitlines()[1].split() == ["ResNLS-5", "28.08", "1350.16", "36.74"]
    write_csv(rows, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "model,mae,mse,rmse,n_test"


class PerfectPredictor:
    """Stub model whose predictions are the targets of the dataset it was built for."""

    def __init__(self, dataset):
        self.normalizer = dataset.normalizer
        self._targets = dataset.targets.data

    def predict(self, inputs):
        return self._targets


def test_perfect_predictor_scores_zero():
    s = make_series(np.linspace(100, 130, 40) + np.sin(np.arange(40)))
    ds = make_windows(s, "close", Normalizer(90.0, 140.0), 5)
    r = evaluate(PerfectPredictor(ds), ds)
    assert r.mae == r.mse == r.rmse == 0.0 and r.n_test == 35
    assert r.dates == ds.target_dates
