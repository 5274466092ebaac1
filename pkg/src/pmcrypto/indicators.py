"""Technical indicators and the 16-channel feature matrix.

Conventions: EMAs are seeded with the first observation; RSI and ATR use
Wilder smoothing seeded by a simple mean. Windowed outputs are NaN before
the first defined index.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError, ShapeError
from .market_data import OhlcvSeries, log_returns

CHANNELS = (
    "open", "high", "low", "close", "base_volume", "quote_volume", "trade_count",
    "sma50", "ema21", "rsi14", "cci20", "atr14", "macd_line", "macd_signal",
    "macd_hist", "log_return",
)
TARGET_CHANNEL = CHANNELS.index("log_return")
WARMUP_ROWS = 50
MIN_BARS = 52


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    channel_names: tuple[str, ...]
    first_valid_row: int = 0
    dates: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.channel_names):
            raise ShapeError(f"values {self.values.shape} vs {len(self.channel_names)} channel names")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ConfigError("channel names must be unique")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __len__(self) -> int:
        return self.values.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.channel_names.index(name)]

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return replace(self, values=np.asarray(values, dtype=np.float64))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        head = list(self.channel_names)
        if self.dates is not None:
            head = ["date"] + head
        writer.writerow(head)
        for i, row in enumerate(self.values):
            cells = [repr(float(v)) for v in row]
            if self.dates is not None:
                cells = [self.dates[i]] + cells
            writer.writerow(cells)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def read_csv(cls, path: str | Path) -> "FeatureMatrix":
        return cls.parse_csv(Path(path).read_text())

    @classmethod
    def parse_csv(cls, text: str) -> "FeatureMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], [r for r in rows[1:] if r]
        dates = None
        if head and head[0] == "date":
            dates = tuple(r[0] for r in body)
            head, body = head[1:], [r[1:] for r in body]
        values = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
        return cls(values.reshape(len(body), len(head)), tuple(head), 0, dates)


def _as_series(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def sma(x: Sequence[float], n: int) -> np.ndarray:
    x = _as_series(x)
    if n < 1:
        raise ConfigError(f"window must be >= 1, got {n}")
    if x.size < n:
        raise InsufficientDataError(f"SMA({n}) needs {n} values, got {x.size}")
    out = np.full(x.size, np.nan)
    out[n - 1:] = np.lib.stride_tricks.sliding_window_view(x, n).mean(axis=1)
    return out


def ema(x: Sequence[float], n: int) -> np.ndarray:
    x = _as_series(x)
    if n < 1:
        raise ConfigError(f"period must be >= 1, got {n}")
    if x.size == 0:
        raise InsufficientDataError("EMA of an empty series")
    k = 2.0 / (n + 1)
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, x.size):
        out[t] = out[t - 1] + k * (x[t] - out[t - 1])
    return out


def _wilder(values: np.ndarray, n: int, start: int) -> np.ndarray:
    """Wilder smoothing of ``values[start:]`` seeded by the mean of its first n."""
    out = np.full(values.size, np.nan)
    seed = start + n - 1
    avg = values[start:start + n].mean()
    out[seed] = avg
    for t in range(seed + 1, values.size):
        avg = (avg * (n - 1) + values[t]) / n
        out[t] = avg
    return out


def rsi(closes: Sequence[float], n: int = 14) -> np.ndarray:
    """Wilder RSI, defined from index ``n``."""
    c = _as_series(closes)
    if c.size < n + 1:
        raise InsufficientDataError(f"RSI({n}) needs {n + 1} closes, got {c.size}")
    diff = np.concatenate([[np.nan], np.diff(c)])
    gains = np.where(diff > 0, diff, 0.0)
    losses = np.where(diff < 0, -diff, 0.0)
    avg_gain = _wilder(gains, n, 1)
    avg_loss = _wilder(losses, n, 1)

    out = np.full(c.size, np.nan)
    defined = ~np.isnan(avg_gain)
    g, l = avg_gain[defined], avg_loss[defined]
    with np.errstate(divide="ignore", invalid="ignore"):
        value = 100.0 - 100.0 / (1.0 + g / l)
    value = np.where(l == 0, np.where(g > 0, 100.0, 50.0), value)
    value = np.where((g == 0) & (l > 0), 0.0, value)
    out[defined] = value
    return out


def cci(high, low, close, n: int = 20) -> np.ndarray:
    h, l, c = _as_series(high), _as_series(low), _as_series(close)
    if not h.size == l.size == c.size:
        raise ShapeError("high/low/close lengths differ")
    if c.size < n:
        raise InsufficientDataError(f"CCI({n}) needs {n} bars, got {c.size}")
    tp = (h + l + c) / 3.0
    windows = np.lib.stride_tricks.sliding_window_view(tp, n)
    mean_tp = windows.mean(axis=1)
    mean_dev = np.abs(windows - mean_tp[:, None]).mean(axis=1)
    out = np.full(c.size, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = (tp[n - 1:] - mean_tp) / (0.015 * mean_dev)
    # Rounding in the window mean can leave a spurious deviation on flat data.
    flat = mean_dev <= 1e-12 * np.abs(mean_tp)
    out[n - 1:] = np.where(flat, 0.0, value)
    return out


def true_range(high, low, close) -> np.ndarray:
    """True range from index 1 (index 0 is NaN: no previous close)."""
    h, l, c = _as_series(high), _as_series(low), _as_series(close)
    prev = np.concatenate([[np.nan], c[:-1]])
    return np.maximum.reduce([h - l, np.abs(h - prev), np.abs(l - prev)])


def atr(high, low, close, n: int = 14) -> np.ndarray:
    """Wilder ATR, defined from index ``n``."""
    h, l, c = _as_series(high), _as_series(low), _as_series(close)
    if not h.size == l.size == c.size:
        raise ShapeError("high/low/close lengths differ")
    if c.size < n + 1:
        raise InsufficientDataError(f"ATR({n}) needs {n + 1} bars, got {c.size}")
    return _wilder(true_range(h, l, c), n, 1)


def macd(closes, fast: int = 12, slow: int = 26, signal: int = 9):
    if fast >= slow:
        raise ConfigError(f"MACD fast period {fast} must be below slow period {slow}")
    c = _as_series(closes)
    line = ema(c, fast) - ema(c, slow)
    sig = ema(line, signal)
    return line, sig, line - sig


def build_feature_matrix(series: OhlcvSeries) -> FeatureMatrix:
    """Raw columns plus indicators, with the first ``WARMUP_ROWS`` rows dropped."""
    if len(series) < MIN_BARS:
        raise InsufficientDataError(f"need at least {MIN_BARS} bars, got {len(series)}")
    o, h, l, c = (series.column(k) for k in ("open", "high", "low", "close"))
    line, sig, hist = macd(c)
    ret = np.concatenate([[np.nan], log_returns(c)])
    columns = [
        o, h, l, c, series.column("base_volume"), series.column("quote_volume"),
        series.column("trade_count"), sma(c, 50), ema(c, 21), rsi(c, 14),
        cci(h, l, c, 20), atr(h, l, c, 14), line, sig, hist, ret,
    ]
    values = np.column_stack(columns)[WARMUP_ROWS:]
    if np.isnan(values).any():
        raise InsufficientDataError("undefined indicator values survive the warm-up trim")
    dates = tuple(d.isoformat() for d in series.dates[WARMUP_ROWS:])
    return FeatureMatrix(np.ascontiguousarray(values), CHANNELS, WARMUP_ROWS, dates)
