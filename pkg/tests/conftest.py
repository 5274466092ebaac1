"""Shared fixtures: synthetic kline files and feature matrices."""

from __future__ import annotations

from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from pmcrypto.indicators import build_feature_matrix
from pmcrypto.market_data import parse_klines

START = date(2021, 1, 1)


def epoch_ms(day: date) -> int:
    return int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp() * 1000)


def kline_row(day: date, o, h, l, c, volume=10.0, trades=100) -> str:
    close_time = epoch_ms(day) + 86_399_999
    return (f"{epoch_ms(day)},{o!r},{h!r},{l!r},{c!r},{volume!r},{close_time},"
            f"{volume * c!r},{trades},0,0,0")


def kline_csv(opens, highs, lows, closes, volumes=None, trades=None, start=START,
              header=False) -> str:
    n = len(closes)
    volumes = np.full(n, 10.0) if volumes is None else volumes
    trades = np.full(n, 100, dtype=int) if trades is None else trades
    rows = [kline_row(start + timedelta(days=i), float(opens[i]), float(highs[i]),
                      float(lows[i]), float(closes[i]), float(volumes[i]), int(trades[i]))
            for i in range(n)]
    if header:
        rows.insert(0, "open_time,open,high,low,close,volume,close_time,quote_asset_volume,"
                       "number_of_trades,taker_buy_base,taker_buy_quote,ignore")
    return "\n".join(rows) + "\n"


def random_walk_ohlc(n: int, seed: int = 0):
    """Positive OHLC bars from a geometric random walk with consistent ranges."""
    rng = np.random.default_rng(seed)
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0.0, 0.02, n)))
    opens = np.concatenate([[100.0], closes[:-1]]) * np.exp(rng.normal(0, 0.002, n))
    top = np.maximum(opens, closes)
    bottom = np.minimum(opens, closes)
    highs = top * (1.0 + rng.uniform(0.0, 0.02, n))
    lows = bottom * (1.0 - rng.uniform(0.0, 0.02, n))
    volumes = rng.uniform(100.0, 1000.0, n)
    trades = rng.integers(1000, 5000, n)
    return opens, highs, lows, closes, volumes, trades


def random_walk_csv(n: int, seed: int = 0) -> str:
    return kline_csv(*random_walk_ohlc(n, seed))


def flat_csv(n: int, price: float = 100.0) -> str:
    p = np.full(n, price)
    return kline_csv(p, p, p, p)


@pytest.fixture
def walk500():
    return random_walk_ohlc(500, seed=11)


@pytest.fixture
def walk_kline_file(tmp_path):
    path = tmp_path / "BTCUSDT.csv"
    path.write_text(random_walk_csv(260, seed=5))
    return path


@pytest.fixture
def walk_matrix():
    return build_feature_matrix(parse_klines(random_walk_csv(260, seed=5), "BTCUSDT"))


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not module.SCORECARD:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.SCORECARD):
        terminalreporter.write_line(line)
