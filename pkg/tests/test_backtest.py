import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from pmcrypto.backtest import (
    REPORT_FIELDS,
    BacktestReport,
    build_report,
    count_trades,
    directional_accuracy,
    max_drawdown,
    positions_from_predictions,
    roi,
    run_strategy,
    sharpe,
)
from pmcrypto.errors import DataError, DomainError, EmptyDataError, ShapeError, UndefinedSharpeError

from oracles import max_drawdown_oracle


def test_sign_rule():
    assert_array_equal(positions_from_predictions([0.01, -0.02, 0.0]), [1, -1, -1])
    assert_array_equal(positions_from_predictions([0.3, 1e-300, 5e-324]), [1, 1, 1])
    assert_array_equal(positions_from_predictions([-5e-324]), [-1])
    with pytest.raises(DataError):
        positions_from_predictions([0.1, math.nan])
    with pytest.raises(EmptyDataError):
        positions_from_predictions([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=40), st.floats(1e-3, 1e3))
def test_positions_and_da_ignore_positive_rescaling(preds, c):
    p = np.array(preds)
    actual = np.random.default_rng(len(preds)).normal(size=p.size)
    assert_array_equal(positions_from_predictions(c * p), positions_from_predictions(p))
    assert directional_accuracy(c * p, actual) == directional_accuracy(p, actual)


def test_strategy_examples():
    curve = run_strategy([1], [0.0])
    assert_array_equal(curve.values, [1.0, 1.0])
    curve = run_strategy([1], [math.log(1.1)])
    assert curve.final == pytest.approx(1.1, rel=1e-15)
    assert roi(curve) == pytest.approx(10.0, rel=1e-12)
    curve = run_strategy([-1], [math.log(0.9)])
    assert curve.strategy_returns[0] == pytest.approx(0.1, rel=1e-12)
    assert curve.final == pytest.approx(1.1, rel=1e-12)
    with pytest.raises(ShapeError):
        run_strategy([1, 1], [0.0])


def test_buy_and_hold_is_exact():
    r = np.random.default_rng(0).normal(0.0, 0.03, 365)
    curve = run_strategy(np.ones(365, dtype=int), r)
    assert abs(curve.final - math.exp(r.sum())) < 1e-10


def test_cost_per_side():
    curve = run_strategy([1, 1, -1], [0.0, 0.0, 0.0], cost_per_side=0.001)
    assert_allclose(curve.strategy_returns, [-0.001, 0.0, -0.002], rtol=0, atol=1e-18)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=200), st.integers(0, 1000))
def test_equity_stays_positive(log_returns, seed):
    r = np.array(log_returns)
    pos = np.random.default_rng(seed).choice([-1, 1], size=r.size)
    curve = run_strategy(pos, r)
    assert (curve.equity > 0).all()
    assert_allclose(curve.equity[1:], curve.equity[:-1] * (1 + curve.strategy_returns[1:]),
                    rtol=1e-15)


@pytest.mark.parametrize("final, expected", [(1.2062, 20.62), (1.0, 0.0), (0.5, -50.0)])
def test_roi_examples(final, expected):
    assert roi([1.0, final]) == pytest.approx(expected, abs=1e-12)


def test_roi_empty():
    with pytest.raises(EmptyDataError):
        roi([])


def test_sharpe_examples():
    assert sharpe([0.01, -0.01, 0.01, -0.01]) == 0.0
    # mean 0.005, sample std 0.0129099..., daily ratio 0.387298..., times sqrt(365).
    value = sharpe([0.02, 0.0, 0.01, -0.01])
    assert value == pytest.approx(0.005 / 0.012909944487358056 * math.sqrt(365), rel=1e-12)
    assert round(value, 2) == 7.40
    with pytest.raises(UndefinedSharpeError):
        sharpe([0.01] * 5)


def test_max_drawdown_examples():
    assert max_drawdown([1.0, 1.2, 0.9, 1.1]) == pytest.approx(-25.0, abs=1e-12)
    assert max_drawdown([1.0, 1.1, 1.5, 2.0]) == 0.0
    assert max_drawdown([1.0, 0.5]) == -50.0
    with pytest.raises(DomainError):
        max_drawdown([1.0, 0.0])
    with pytest.raises(EmptyDataError):
        max_drawdown([])


def test_max_drawdown_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(5):
        values = np.exp(np.cumsum(rng.normal(0, 0.05, 1000)))
        assert max_drawdown(values) == max_drawdown_oracle(list(values))


def test_drawdown_counts_initial_equity():
    curve = run_strategy([1, 1], [math.log(0.8), math.log(1.1)])
    assert max_drawdown(curve) == pytest.approx(-20.0, abs=1e-12)


def test_directional_accuracy_examples():
    assert directional_accuracy([1, -1, 1], [1, 1, 1]) == pytest.approx(200 / 3)
    x = [0.1, -0.3, 0.0]
    assert directional_accuracy(x, x) == 100.0
    assert directional_accuracy([0.0, 0.1], [0.0, 0.0]) == 50.0
    with pytest.raises(ShapeError):
        directional_accuracy([1.0], [1.0, 2.0])


def test_directional_accuracy_on_fair_coin():
    actual = np.random.default_rng(0).choice([-1.0, 1.0], size=100_000)
    assert abs(directional_accuracy(np.full(actual.size, 1e-9), actual) - 50.0) <= 1.0


def test_trade_count():
    assert count_trades([1, 1, -1, -1, 1]) == 3
    assert count_trades([]) == 0


def test_report_perfect_and_zero_predictions():
    r = np.random.default_rng(2).normal(0, 0.02, 100)
    report, _ = build_report(r, r)
    assert report.directional_accuracy_pct == 100.0
    assert report.total_roi_pct >= 0
    assert report.mse == 0.0

    report, curve = build_report(np.zeros(100), r)
    assert_array_equal(curve.positions, -1)
    direct = run_strategy(-np.ones(100, dtype=int), r)
    assert report.total_roi_pct == roi(direct)
    assert report.sharpe == sharpe(direct.strategy_returns)
    assert report.n_days == 100 and report.n_trades == 1


def test_report_round_trip(tmp_path):
    r = np.random.default_rng(3).normal(0, 0.02, 50)
    report, curve = build_report(r + 0.01, r, "naive", "BTCUSDT")
    report.save(tmp_path / "r.json")
    assert BacktestReport.load(tmp_path / "r.json") == report
    raw = json.loads((tmp_path / "r.json").read_text())
    assert set(REPORT_FIELDS) <= set(raw)
    csv = curve.to_csv(tmp_path / "e.csv").splitlines()
    assert csv[0] == "date,position,strategy_return,equity" and len(csv) == 51


def test_undefined_sharpe_reported_as_null():
    report, _ = build_report([1.0, 1.0], [0.0, 0.0])
    assert math.isnan(report.sharpe)
    assert json.loads(report.to_json())["sharpe"] is None
    assert math.isnan(BacktestReport.from_dict(json.loads(report.to_json())).sharpe)


def test_report_missing_field():
    with pytest.raises(DataError):
        BacktestReport.from_dict({"mse": 1.0})
