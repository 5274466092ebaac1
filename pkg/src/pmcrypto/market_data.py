"""Daily kline ingestion, log-return target, chronological split and scaling."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
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

logger = logging.getLogger(__name__)

KLINE_COLUMNS = (
    "open_time", "open", "high", "low", "close", "volume", "close_time",
    "quote_asset_volume", "number_of_trades", "taker_buy_base",
    "taker_buy_quote", "ignore",
)


@dataclass(frozen=True)
class OhlcvBar:
    open_time: date
    open: float
    high: float
    low: float
    close: float
    base_volume: float
    quote_volume: float
    trade_count: int

    def validate(self) -> None:
        prices = (self.open, self.high, self.low, self.close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise ValidationError(f"{self.open_time}: prices must be positive, got {prices}")
        if self.low > min(self.open, self.close):
            raise ValidationError(f"{self.open_time}: low {self.low} above open/close")
        if self.high < max(self.open, self.close):
            raise ValidationError(f"{self.open_time}: high {self.high} below open/close")
        if self.trade_count < 0:
            raise ValidationError(f"{self.open_time}: negative trade count")


@dataclass(frozen=True)
class OhlcvSeries:
    bars: tuple[OhlcvBar, ...]
    symbol: str = ""
    gaps: tuple[date, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.bars)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(b, name) for b in self.bars], dtype=np.float64)

    @property
    def dates(self) -> list[date]:
        return [b.open_time for b in self.bars]


def _parse_time(token: str, row: int) -> date:
    token = token.strip()
    if token.lstrip("-").isdigit():
        value = int(token)
        # Binance switched some exports to microseconds.
        if value > 10 ** 14:
            value //= 1000
        return datetime.fromtimestamp(value / 1000, tz=timezone.utc).date()
    try:
        return date.fromisoformat(token[:10])
    except ValueError:
        raise ParseError(f"unreadable open_time {token!r}", row) from None


def parse_klines(csv_text: str, symbol: str = "") -> OhlcvSeries:
    """Parse Binance daily kline rows (header optional) into a series.

    Missing calendar days are recorded in ``gaps`` but never filled.
    """
    rows = [r for r in csv.reader(io.StringIO(csv_text)) if r and any(c.strip() for c in r)]
    if rows and not rows[0][0].strip().lstrip("-")[:1].isdigit():
        rows = rows[1:]
    if not rows:
        raise EmptyDataError("no kline rows found")

    bars: list[OhlcvBar] = []
    for i, row in enumerate(rows, start=1):
        if len(row) < 9:
            raise ParseError(f"expected at least 9 columns, got {len(row)}", i)
        try:
            o, h, l, c, vol = (float(row[k]) for k in range(1, 6))
            qvol = float(row[7])
            trades = float(row[8])
        except ValueError as exc:
            raise ParseError(str(exc), i) from None
        if trades != int(trades):
            raise ParseError(f"trade count {row[8]!r} is not an integer", i)
        bar = OhlcvBar(_parse_time(row[0], i), o, h, l, c, vol, qvol, int(trades))
        try:
            bar.validate()
        except ValidationError as exc:
            raise ValidationError(f"row {i}: {exc}") from None
        if bars:
            prev = bars[-1].open_time
            if bar.open_time == prev:
                raise OrderingError(f"row {i}: duplicated timestamp {bar.open_time}")
            if bar.open_time < prev:
                raise OrderingError(f"row {i}: timestamp {bar.open_time} precedes {prev}")
        bars.append(bar)

    gaps = []
    for prev, cur in zip(bars, bars[1:]):
        day = prev.open_time + timedelta(days=1)
        while day < cur.open_time:
            gaps.append(day)
            day += timedelta(days=1)
    if gaps:
        logger.warning("%s: %d missing calendar day(s), first %s", symbol or "series",
                       len(gaps), gaps[0])
    return OhlcvSeries(tuple(bars), symbol, tuple(gaps))


def read_klines(path: str | Path, symbol: str | None = None) -> OhlcvSeries:
    path = Path(path)
    return parse_klines(path.read_text(), symbol if symbol is not None else path.stem)


def log_returns(closes: Sequence[float]) -> np.ndarray:
    """``out[t] = ln(P[t+1] / P[t])``; one element shorter than the input."""
    p = np.asarray(closes, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise InsufficientDataError("log returns need at least two prices")
    if not np.all(p > 0):
        raise DomainError("log returns need strictly positive prices")
    return np.log(p[1:] / p[:-1])


@dataclass(frozen=True)
class SplitIndex:
    train_end: int
    val_end: int
    total: int

    def slices(self) -> tuple[slice, slice, slice]:
        return (slice(0, self.train_end), slice(self.train_end, self.val_end),
                slice(self.val_end, self.total))


def chronological_split(total: int, ratios: Sequence[float] = (0.7, 0.2, 0.1)) -> SplitIndex:
    """Floor-based train/validation boundaries; the remainder goes to test."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    if total < 10:
        raise SplitError(f"need at least 10 rows to split, got {total}")
    # The small epsilon keeps 0.7*100 from flooring to 69.
    train_end = math.floor(ratios[0] * total + 1e-9)
    val_end = train_end + math.floor(ratios[1] * total + 1e-9)
    if not 0 < train_end < val_end < total:
        raise SplitError(f"{total} rows leave an empty split under ratios {ratios}")
    return SplitIndex(train_end, val_end, total)


@dataclass(frozen=True)
class MinMaxScaler:
    names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        return self.maxs == self.mins

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        span = np.where(self.degenerate, 1.0, self.maxs - self.mins)
        out = (values - self.mins) / span
        return np.where(self.degenerate, 0.0, out)

    def invert(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        return values * (self.maxs - self.mins) + self.mins

    def invert_channel(self, values, channel: int) -> np.ndarray:
        """Undo scaling for a single channel (e.g. target predictions)."""
        return np.asarray(values, dtype=np.float64) * (self.maxs[channel] - self.mins[channel]) \
            + self.mins[channel]

    def _check(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != len(self.mins):
            raise ShapeError(f"scaler has {len(self.mins)} channels, data has {values.shape[-1]}")
        return values

    def save(self, path: str | Path) -> None:
        lines = [f"{n} = {float(self.mins[i])!r} {float(self.maxs[i])!r} {int(self.degenerate[i])}"
                 for i, n in enumerate(self.names)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MinMaxScaler":
        names, mins, maxs = [], [], []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            name, rest = line.split(" = ")
            lo, hi, _flag = rest.split()
            names.append(name)
            mins.append(float(lo))
            maxs.append(float(hi))
        return cls(tuple(names), np.array(mins), np.array(maxs))


def fit_minmax(matrix, split: SplitIndex) -> MinMaxScaler:
    """Learn per-channel min/max from rows ``[0, train_end)`` only."""
    values = getattr(matrix, "values", matrix)
    names = tuple(getattr(matrix, "channel_names", [f"c{i}" for i in range(values.shape[1])]))
    train = np.asarray(values, dtype=np.float64)[: split.train_end]
    if train.shape[0] == 0:
        raise EmptyDataError("cannot fit scaler on an empty training slice")
    mins, maxs = train.min(axis=0), train.max(axis=0)
    for name in np.array(names)[maxs == mins]:
        logger.info("channel %s is constant on the training rows; scaled to 0", name)
    return MinMaxScaler(names, mins.copy(), maxs.copy())


def apply_minmax(scaler: MinMaxScaler, matrix):
    return _replace_values(matrix, scaler.apply(getattr(matrix, "values", matrix)))


def invert_minmax(scaler: MinMaxScaler, matrix):
    return _replace_values(matrix, scaler.invert(getattr(matrix, "values", matrix)))


def _replace_values(matrix, values):
    if hasattr(matrix, "with_values"):
        return matrix.with_values(values)
    return values


def make_windows(matrix, window: int, horizon: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Stack every (input rows ``[k, k+window)``, target row ``k+window``) pair.

    Returns ``inputs`` of shape (N, window, D) and ``targets`` of shape (N, D)
    with ``N = T - window``.
    """
    if horizon != 1:
        raise ConfigError("only one-step-ahead windows are supported")
    values = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    total = values.shape[0]
    if total <= window:
        raise InsufficientDataError(f"{total} rows cannot form a window of {window} plus a target")
    inputs = np.lib.stride_tricks.sliding_window_view(values, window, axis=0)[: total - window]
    return np.ascontiguousarray(np.swapaxes(inputs, 1, 2)), values[window:].copy()
