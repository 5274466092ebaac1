"""Reference predictors: naive repeat, AR(p) by least squares, and DLinear."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, EmptyDataError, InsufficientDataError, NumericError, ShapeError


def naive_repeat(values: Sequence[float]) -> np.ndarray:
    """Prediction for step t+1 is the value observed at step t."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise EmptyDataError("naive forecast of an empty series")
    return x.copy()


# -- autoregression --------------------------------------------------------------


@dataclass(frozen=True)
class ArModel:
    order: int
    intercept: float
    coefs: tuple[float, ...]
    diff_order: int = 0

    def predict(self, history: Sequence[float]) -> float:
        return predict_ar(self, history)

    def save(self, path: str | Path) -> None:
        lines = [f"p = {self.order}", f"d = {self.diff_order}", "q = 0",
                 f"intercept = {self.intercept!r}"]
        lines += [f"phi{i + 1} = {c!r}" for i, c in enumerate(self.coefs)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ArModel":
        kv = dict(line.split(" = ") for line in Path(path).read_text().splitlines() if line)
        p = int(kv["p"])
        if int(kv.get("q", 0)) != 0:
            raise ConfigError("moving-average terms are not supported")
        return cls(p, float(kv["intercept"]), tuple(float(kv[f"phi{i + 1}"]) for i in range(p)),
                   int(kv.get("d", 0)))


def _lag_matrix(x: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    n = x.size
    lags = np.column_stack([x[p - i:n - i] for i in range(1, p + 1)])
    return np.column_stack([np.ones(n - p), lags]), x[p:]


def fit_ar(train: Sequence[float], p: int = 2, d: int = 0) -> ArModel:
    """Ordinary least squares on ``[1, x_{t-1}, ..., x_{t-p}] -> x_t``."""
    if p < 1:
        raise ConfigError(f"AR order must be >= 1, got {p}")
    if d != 0:
        raise ConfigError("only d=0 is supported")
    x = np.asarray(train, dtype=np.float64)
    if x.size < p + 2:
        raise InsufficientDataError(f"AR({p}) needs at least {p + 2} observations, got {x.size}")
    design, target = _lag_matrix(x, p)
    gram = design.T @ design
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e14:
        # A constant series is the common case: all regressors are collinear.
        if np.ptp(x) == 0:
            return ArModel(p, float(x[0]), (0.0,) * p, d)
        raise NumericError(f"AR({p}) normal equations are singular (condition number {cond:.3g})")
    beta, *_ = np.linalg.lstsq(design, target, rcond=None)
    return ArModel(p, float(beta[0]), tuple(float(b) for b in beta[1:]), d)


def predict_ar(model: ArModel, history: Sequence[float]) -> float:
    """``intercept + sum_i phi_i * x_{t-i+1}`` where ``history[-1]`` is the latest value."""
    h = np.asarray(history, dtype=np.float64)
    if h.size < model.order:
        raise InsufficientDataError(f"AR({model.order}) needs {model.order} past values, got {h.size}")
    recent = h[::-1][: model.order]
    return float(model.intercept + np.dot(model.coefs, recent))


# -- DLinear ------------------------------------------------------------------------


@dataclass(frozen=True)
class DlinearConfig:
    seq_len: int = 48
    n_channels: int = 16
    moving_avg: int = 25
    individual: bool = True
    lr: float = 7.33e-4
    batch_size: int = 64
    epochs: int = 100

    def __post_init__(self):
        if not 1 <= self.moving_avg <= self.seq_len:
            raise ConfigError(f"moving-average window {self.moving_avg} must lie in [1, {self.seq_len}]")

    def to_dict(self) -> dict:
        return asdict(self)


def decompose(window: np.ndarray, kernel: int) -> tuple[np.ndarray, np.ndarray]:
    """Centered moving-average trend (edge-replicated) and the remainder.

    Works along axis -2 of a (..., SL, C) array.
    """
    x = np.asarray(window, dtype=np.float64)
    front = (kernel - 1) // 2
    back = kernel - 1 - front
    pad = [(0, 0)] * x.ndim
    pad[-2] = (front, back)
    padded = np.pad(x, pad, mode="edge")
    csum = np.cumsum(padded, axis=-2)
    zero = np.zeros_like(np.take(csum, [0], axis=-2))
    csum = np.concatenate([zero, csum], axis=-2)
    sl = x.shape[-2]
    hi = np.take(csum, np.arange(kernel, kernel + sl), axis=-2)
    lo = np.take(csum, np.arange(0, sl), axis=-2)
    trend = (hi - lo) / kernel
    return trend, x - trend


class Dlinear:
    """Trend and remainder each mapped SL -> 1 by a linear layer, then summed."""

    def __init__(self, config: DlinearConfig, params: Mapping[str, Tensor] | None = None,
                 seed: int = 0):
        self.config = config
        if params is None:
            rng = np.random.default_rng(seed)
            width = config.n_channels if config.individual else 1
            bound = 1.0 / np.sqrt(config.seq_len)
            params = {
                "trend.w": Tensor(rng.uniform(-bound, bound, (config.seq_len, width)), True),
                "trend.b": Tensor(np.zeros(width), True),
                "remainder.w": Tensor(rng.uniform(-bound, bound, (config.seq_len, width)), True),
                "remainder.b": Tensor(np.zeros(width), True),
            }
        self.params = dict(params)

    def forward(self, window) -> Tensor:
        x = np.asarray(window, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.shape[1:] != (self.config.seq_len, self.config.n_channels):
            raise ShapeError(f"window {x.shape[1:]} vs expected "
                             f"({self.config.seq_len}, {self.config.n_channels})")
        trend, rem = decompose(x, self.config.moving_avg)
        p = self.params
        out = (ag.sum_(Tensor(trend) * p["trend.w"], axis=1) + p["trend.b"]
               + ag.sum_(Tensor(rem) * p["remainder.w"], axis=1) + p["remainder.b"])
        return out.reshape(out.shape[1:]) if single else out

    def predict(self, window) -> np.ndarray:
        with ag.no_grad():
            return self.forward(window).data

    def save(self, path, channel_names=None) -> None:
        ag.save_checkpoint(path, self.params, {"model": "dlinear", "config": self.config.to_dict(),
                                               "channel_names": list(channel_names or [])})

    @classmethod
    def load(cls, path) -> "Dlinear":
        header, arrays = ag.load_checkpoint(path)
        if header.get("model") != "dlinear":
            raise ConfigError(f"{path} is not a DLinear checkpoint")
        return cls(DlinearConfig(**header["config"]),
                   {k: Tensor(v, True) for k, v in arrays.items()})


def fit_dlinear(inputs: np.ndarray, targets: np.ndarray, config: DlinearConfig,
                seed: int = 0) -> Dlinear:
    """Minibatch Adam on mean squared error for ``config.epochs`` epochs."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.shape[0] != targets.shape[0] or targets.shape[1:] != (config.n_channels,):
        raise ShapeError(f"inputs {inputs.shape} and targets {targets.shape} disagree")
    rng = np.random.default_rng(seed)
    model = Dlinear(config, seed=seed)
    opt = ag.Adam(model.params, config.lr)
    n = inputs.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = ((model.forward(inputs[idx]) - targets[idx]) ** 2).mean()
            if not np.isfinite(loss.item()):
                raise NumericError("DLinear training diverged (non-finite loss)")
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model


def predict_dlinear(model: Dlinear, window) -> np.ndarray:
    return model.predict(window)
