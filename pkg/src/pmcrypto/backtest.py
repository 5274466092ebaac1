"""Sign-rule trading simulation and trading/statistical report."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, DomainError, EmptyDataError, InsufficientDataError, ShapeError, UndefinedSharpeError
from .training import evaluate_statistics

logger = logging.getLogger(__name__)

ANNUALIZATION_DAYS = 365
REPORT_FIELDS = ("mse", "rmse", "mae", "total_roi_pct", "sharpe", "max_drawdown_pct",
                 "directional_accuracy_pct", "n_days")


def positions_from_predictions(preds: Sequence[float]) -> np.ndarray:
    """+1 (long) where the predicted return is positive, -1 (short) otherwise."""
    p = np.asarray(preds, dtype=np.float64)
    if p.size == 0:
        raise EmptyDataError("no predictions")
    if not np.all(np.isfinite(p)):
        raise DataError("non-finite prediction")
    return np.where(p > 0, 1, -1).astype(np.int64)


@dataclass(frozen=True)
class EquityCurve:
    equity: np.ndarray
    strategy_returns: np.ndarray
    positions: np.ndarray
    initial: float = 1.0

    @property
    def values(self) -> np.ndarray:
        """Equity including the initial value."""
        return np.concatenate([[self.initial], self.equity])

    @property
    def final(self) -> float:
        return float(self.equity[-1]) if self.equity.size else self.initial

    def to_csv(self, path: str | Path | None = None, dates: Sequence[str] | None = None) -> str:
        rows = ["date,position,strategy_return,equity"]
        for i in range(self.equity.size):
            day = dates[i] if dates is not None else str(i)
            rows.append(f"{day},{int(self.positions[i])},{float(self.strategy_returns[i])!r},"
                        f"{float(self.equity[i])!r}")
        text = "\n".join(rows) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def run_strategy(positions: Sequence[int], actual_log_returns: Sequence[float],
                 cost_per_side: float = 0.0) -> EquityCurve:
    """Compound ``position * (exp(r) - 1)`` from an equity of 1.0.

    ``cost_per_side`` is a fraction of equity charged per traded side.
    """
    pos = np.asarray(positions)
    r = np.asarray(actual_log_returns, dtype=np.float64)
    if pos.shape != r.shape:
        raise ShapeError(f"positions {pos.shape} vs returns {r.shape}")
    strat = pos * np.expm1(r)
    if cost_per_side:
        # Opening from flat is one side; a long/short flip is two.
        prev = np.concatenate([[0], pos[:-1]])
        strat = strat - cost_per_side * np.abs(pos - prev)
    equity = np.cumprod(1.0 + strat)
    return EquityCurve(equity, strat, pos.astype(np.int64))


def roi(curve) -> float:
    """Total return in percent."""
    values = curve.values if isinstance(curve, EquityCurve) else np.asarray(curve, dtype=np.float64)
    if values.size == 0:
        raise EmptyDataError("empty equity curve")
    return (values[-1] / values[0] - 1.0) * 100.0


def sharpe(strategy_returns: Sequence[float], periods: int = ANNUALIZATION_DAYS) -> float:
    """Mean over sample standard deviation of daily returns, times sqrt(periods)."""
    s = np.asarray(strategy_returns, dtype=np.float64)
    if s.size < 2:
        raise InsufficientDataError("Sharpe ratio needs at least two returns")
    sd = s.std(ddof=1)
    if sd == 0:
        raise UndefinedSharpeError("Sharpe ratio undefined: strategy returns have zero variance")
    return float(s.mean() / sd * math.sqrt(periods))


def max_drawdown(curve) -> float:
    """Worst peak-to-trough decline in percent (<= 0)."""
    values = curve.values if isinstance(curve, EquityCurve) else np.asarray(curve, dtype=np.float64)
    if values.size == 0:
        raise EmptyDataError("empty equity curve")
    if np.any(values <= 0):
        raise DomainError("equity must stay positive")
    peaks = np.maximum.accumulate(values)
    return float(np.min(values / peaks - 1.0) * 100.0)


def directional_accuracy(preds, actuals) -> float:
    p = np.asarray(preds, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape:
        raise ShapeError(f"predictions {p.shape} vs actuals {a.shape}")
    if p.size == 0:
        raise EmptyDataError("no predictions")
    return float(np.mean(np.sign(p) == np.sign(a)) * 100.0)


def count_trades(positions: Sequence[int]) -> int:
    """Opening trade plus every subsequent position flip."""
    pos = np.asarray(positions)
    if pos.size == 0:
        return 0
    return int(1 + np.count_nonzero(np.diff(pos)))


@dataclass(frozen=True)
class BacktestReport:
    mse: float
    rmse: float
    mae: float
    total_roi_pct: float
    sharpe: float
    max_drawdown_pct: float
    directional_accuracy_pct: float
    n_days: int
    n_trades: int = 0
    model: str = ""
    asset: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        # JSON has no NaN; an undefined Sharpe is written as null.
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in out.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, raw: dict) -> "BacktestReport":
        missing = [f for f in REPORT_FIELDS if f not in raw]
        if missing:
            raise DataError(f"report lacks fields {missing}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            v = raw[f.name]
            if f.name in ("n_days", "n_trades"):
                kwargs[f.name] = int(v)
            elif f.name in ("model", "asset"):
                kwargs[f.name] = str(v)
            else:
                kwargs[f.name] = math.nan if v is None else float(v)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "BacktestReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_report(preds, actuals, model: str = "", asset: str = "",
                 cost_per_side: float = 0.0) -> tuple[BacktestReport, EquityCurve]:
    """All statistical and trading metrics for aligned test-period returns."""
    p = np.asarray(preds, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    mse, rmse, mae = evaluate_statistics(p, a)
    positions = positions_from_predictions(p)
    curve = run_strategy(positions, a, cost_per_side)
    try:
        sr = sharpe(curve.strategy_returns)
    except (UndefinedSharpeError, InsufficientDataError) as exc:
        logger.warning("%s; reporting NaN", exc)
        sr = math.nan
    report = BacktestReport(
        mse=mse, rmse=rmse, mae=mae,
        total_roi_pct=roi(curve),
        sharpe=sr,
        max_drawdown_pct=max_drawdown(curve),
        directional_accuracy_pct=directional_accuracy(p, a),
        n_days=int(p.size),
        n_trades=count_trades(positions),
        model=model, asset=asset,
    )
    return report, curve
