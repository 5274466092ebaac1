import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from pmcrypto.errors import (
    ConfigError,
    DomainError,
    EmptyDataError,
    InsufficientDataError,
    OrderingError,
    ParseError,
    ShapeError,
    SplitError,
    ValidationError,
)
from pmcrypto.market_data import (
    MinMaxScaler,
    apply_minmax,
    chronological_split,
    fit_minmax,
    invert_minmax,
    log_returns,
    make_windows,
    parse_klines,
    read_klines,
)

from conftest import START, epoch_ms, kline_csv, kline_row, random_walk_csv


# -- parsing -----------------------------------------------------------------------


def test_single_row_parses():
    series = parse_klines(kline_row(START, 99.0, 101.0, 98.0, 100.0) + "\n", "BTC")
    assert len(series) == 1
    assert series.bars[0].close == 100.0
    assert series.bars[0].open_time == START
    assert series.symbol == "BTC"


def test_header_is_optional():
    closes = [100.0, 101.0, 102.0]
    a = parse_klines(kline_csv(closes, closes, closes, closes))
    b = parse_klines(kline_csv(closes, closes, closes, closes, header=True))
    assert a.bars == b.bars


def test_iso_dates_and_microseconds():
    us = epoch_ms(date(2024, 3, 1)) * 1000
    text = (f"2024-02-29,1,2,0.5,1.5,3,0,4,7,0,0,0\n"
            f"{us},1,2,0.5,1.5,3,0,4,7,0,0,0\n")
    series = parse_klines(text)
    assert series.dates == [date(2024, 2, 29), date(2024, 3, 1)]
    assert series.bars[0].trade_count == 7
    assert series.bars[0].quote_volume == 4.0


def test_decreasing_timestamps_rejected():
    rows = [kline_row(date(2021, 1, 2), 1, 1, 1, 1), kline_row(date(2021, 1, 1), 1, 1, 1, 1)]
    with pytest.raises(OrderingError):
        parse_klines("\n".join(rows))


def test_duplicate_timestamps_rejected():
    rows = [kline_row(START, 1, 1, 1, 1)] * 2
    with pytest.raises(OrderingError, match="duplicated"):
        parse_klines("\n".join(rows))


def test_high_below_low_rejected():
    with pytest.raises(ValidationError):
        parse_klines(kline_row(START, 1.0, 0.9, 1.1, 1.0))


def test_nonpositive_price_rejected():
    with pytest.raises(ValidationError):
        parse_klines(kline_row(START, 0.0, 1.0, 0.0, 1.0))


def test_malformed_row_reports_row_number():
    good = kline_row(START, 1, 1, 1, 1)
    bad = "1609545600000,1,abc,1,1,1,0,1,1,0,0,0"
    with pytest.raises(ParseError) as info:
        parse_klines(good + "\n" + bad)
    assert info.value.row == 2


def test_short_row_rejected():
    with pytest.raises(ParseError):
        parse_klines("1609459200000,1,1,1")


def test_empty_input():
    with pytest.raises(EmptyDataError):
        parse_klines("")
    with pytest.raises(EmptyDataError):
        parse_klines("open_time,open,high,low,close\n")


def test_gaps_recorded_not_filled():
    rows = [kline_row(date(2021, 1, 1), 1, 1, 1, 1), kline_row(date(2021, 1, 4), 1, 1, 1, 1)]
    series = parse_klines("\n".join(rows))
    assert len(series) == 2
    assert series.gaps == (date(2021, 1, 2), date(2021, 1, 3))


def test_read_klines_uses_stem_as_symbol(tmp_path):
    path = tmp_path / "ETHUSDT.csv"
    path.write_text(random_walk_csv(5))
    assert read_klines(path).symbol == "ETHUSDT"


# -- log returns ---------------------------------------------------------------------


def test_log_return_examples():
    assert_array_equal(log_returns([100, 100]), [0.0])
    assert_allclose(log_returns([1, 2]), [math.log(2)], rtol=0, atol=1e-15)
    assert_allclose(log_returns([100, 100 * math.e]), [1.0], rtol=0, atol=1e-15)


def test_log_return_errors():
    with pytest.raises(DomainError):
        log_returns([1.0, 0.0, 2.0])
    with pytest.raises(InsufficientDataError):
        log_returns([1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e6), min_size=2, max_size=60))
def test_returns_reconstruct_closes(closes):
    closes = np.array(closes)
    rebuilt = closes[0] * np.exp(np.concatenate([[0.0], np.cumsum(log_returns(closes))]))
    assert_allclose(rebuilt, closes, rtol=1e-12)


# -- split ---------------------------------------------------------------------------


@pytest.mark.parametrize("total, train_end, val_end", [(100, 70, 90), (10, 7, 9), (101, 70, 90)])
def test_split_examples(total, train_end, val_end):
    split = chronological_split(total)
    assert (split.train_end, split.val_end) == (train_end, val_end)


def test_split_rejects_tiny_and_bad_ratios():
    with pytest.raises(SplitError):
        chronological_split(9)
    with pytest.raises(ConfigError):
        chronological_split(100, (0.5, 0.3, 0.3))


@settings(max_examples=200, deadline=None)
@given(st.integers(10, 100_000))
def test_split_floor_rule_and_order(total):
    split = chronological_split(total)
    assert split.train_end == (7 * total) // 10
    assert split.val_end - split.train_end == (2 * total) // 10
    assert 0 < split.train_end < split.val_end < total
    parts = [np.arange(total)[s] for s in split.slices()]
    assert_array_equal(np.concatenate(parts), np.arange(total))
    assert parts[0].max() < parts[1].min() and parts[1].max() < parts[2].min()


# -- scaling -------------------------------------------------------------------------


def test_minmax_examples():
    values = np.column_stack([np.arange(11.0), np.full(11, 5.0)])
    split = chronological_split(16)  # train_end = 11
    scaler = fit_minmax(np.vstack([values, np.full((5, 2), 99.0)]), split)
    assert scaler.mins[0] == 0 and scaler.maxs[0] == 10
    assert_array_equal(scaler.degenerate, [False, True])

    scaler = MinMaxScaler(("a", "b"), np.array([0.0, 5.0]), np.array([10.0, 5.0]))
    assert_array_equal(scaler.apply(np.array([[5.0, 5.0]])), [[0.5, 0.0]])


def test_out_of_range_values_not_clipped():
    scaler = MinMaxScaler(("a",), np.array([0.0]), np.array([10.0]))
    assert_array_equal(scaler.apply(np.array([[-5.0], [20.0]])), [[-0.5], [2.0]])


def test_scaler_channel_mismatch():
    scaler = MinMaxScaler(("a",), np.array([0.0]), np.array([1.0]))
    with pytest.raises(ShapeError):
        scaler.apply(np.zeros((3, 2)))


def test_empty_training_slice():
    from pmcrypto.market_data import SplitIndex
    with pytest.raises(EmptyDataError):
        fit_minmax(np.zeros((5, 2)), SplitIndex(0, 3, 5))


def test_scaler_ignores_non_training_rows():
    rng = np.random.default_rng(3)
    values = rng.normal(size=(200, 5))
    split = chronological_split(200)
    before = fit_minmax(values, split)
    perturbed = values.copy()
    perturbed[split.train_end:] = rng.normal(scale=1e6, size=perturbed[split.train_end:].shape)
    after = fit_minmax(perturbed, split)
    assert before.mins.tobytes() == after.mins.tobytes()
    assert before.maxs.tobytes() == after.maxs.tobytes()


def test_round_trip_identities(walk_matrix):
    split = chronological_split(len(walk_matrix))
    scaler = fit_minmax(walk_matrix, split)
    keep = ~scaler.degenerate
    scaled = apply_minmax(scaler, walk_matrix)
    back = invert_minmax(scaler, scaled)
    assert_allclose(back.values[:, keep], walk_matrix.values[:, keep], rtol=1e-12, atol=1e-12)
    again = apply_minmax(scaler, invert_minmax(scaler, scaled))
    assert_allclose(again.values, scaled.values, rtol=0, atol=1e-12)


def test_scaler_save_load(tmp_path):
    scaler = MinMaxScaler(("a", "b"), np.array([0.1, 5.0]), np.array([1 / 3, 5.0]))
    scaler.save(tmp_path / "s.txt")
    loaded = MinMaxScaler.load(tmp_path / "s.txt")
    assert loaded.names == scaler.names
    assert loaded.mins.tobytes() == scaler.mins.tobytes()
    assert loaded.maxs.tobytes() == scaler.maxs.tobytes()
    assert "b = 5.0 5.0 1" in (tmp_path / "s.txt").read_text()


# -- windows -------------------------------------------------------------------------


@pytest.mark.parametrize("total, count", [(49, 1), (100, 52)])
def test_window_counts(total, count):
    x, y = make_windows(np.zeros((total, 3)), 48)
    assert x.shape == (count, 48, 3) and y.shape == (count, 3)


def test_window_too_long():
    with pytest.raises(InsufficientDataError):
        make_windows(np.zeros((48, 3)), 48)


def test_window_contents():
    values = np.arange(30.0).reshape(10, 3)
    x, y = make_windows(values, 4)
    for k in range(6):
        assert_array_equal(x[k], values[k:k + 4])
        assert_array_equal(y[k], values[k + 4])
