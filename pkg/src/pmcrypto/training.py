"""Subset-sampled training, validation-based model selection and search."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .baselines import Dlinear, DlinearConfig
from .errors import ConfigError, EmptyDataError, NumericError, ShapeError
from .market_data import MinMaxScaler, SplitIndex, chronological_split, fit_minmax, make_windows
from .pmformer import Pmformer, PmformerConfig, forward, predict_target

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (42, 1337, 2025)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    patience: int = 10
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    eval_seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1 or self.patience < 1 or self.epochs < 0:
            raise ConfigError("batch size and patience must be >= 1, epochs >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch] if self.best_epoch >= 0 else math.inf

    def to_csv(self, path: str | Path | None = None) -> str:
        rows = ["epoch,train_loss,val_mse"]
        rows += [f"{i},{tl!r},{vm!r}" for i, (tl, vm) in enumerate(zip(self.train_loss, self.val_mse))]
        text = "\n".join(rows) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass(frozen=True)
class PreparedData:
    """Scaled windows grouped by the split that owns each target row.

    A window's input rows may reach back into an earlier split; only its
    target row decides membership.
    """

    scaler: MinMaxScaler
    split: SplitIndex
    target_channel: int
    seq_len: int
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    test_rows: np.ndarray

    def unscale_target(self, values) -> np.ndarray:
        return self.scaler.invert_channel(values, self.target_channel)


def prepare_data(matrix, seq_len: int, target_channel: int,
                 ratios: Sequence[float] = (0.7, 0.2, 0.1)) -> PreparedData:
    values = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    split = chronological_split(values.shape[0], ratios)
    if split.train_end <= seq_len:
        raise EmptyDataError(f"training split ({split.train_end} rows) is shorter than one "
                             f"window of {seq_len} plus a target")
    scaler = fit_minmax(matrix, split)
    scaled = scaler.apply(values)
    x, y = make_windows(scaled, seq_len)
    rows = np.arange(seq_len, values.shape[0])
    tr = rows < split.train_end
    va = (rows >= split.train_end) & (rows < split.val_end)
    te = rows >= split.val_end
    return PreparedData(scaler, split, target_channel, seq_len,
                        x[tr], y[tr], x[va], y[va], x[te], y[te], rows[te])


def sample_partition(n_features: int, subset_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random permutation of ``range(n_features)`` cut into groups of ``subset_size``."""
    if not 1 < subset_size < n_features:
        raise ConfigError(f"need 1 < S < D, got S={subset_size}, D={n_features}")
    perm = rng.permutation(n_features)
    return [perm[i:i + subset_size] for i in range(0, n_features, subset_size)]


def mse_loss(pred, target) -> Tensor:
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    return ((pred - target) ** 2).mean()


def evaluate_statistics(predictions, actuals) -> tuple[float, float, float]:
    """(MSE, RMSE, MAE)."""
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape:
        raise ShapeError(f"predictions {p.shape} vs actuals {a.shape}")
    if p.size == 0:
        raise EmptyDataError("no predictions to evaluate")
    err = p - a
    mse = float(np.mean(err ** 2))
    return mse, math.sqrt(mse), float(np.mean(np.abs(err)))


# -- model adapters ---------------------------------------------------------------


class _PmformerRun:
    def __init__(self, config: PmformerConfig, seed: int):
        self.config = config
        self.model = Pmformer(config, seed=seed)

    @property
    def params(self):
        return self.model.params

    def batch_loss(self, x, y, rng) -> Tensor:
        """Squared error summed over a fresh feature partition, averaged per cell."""
        total = None
        for ids in sample_partition(self.config.n_features, self.config.subset_size, rng):
            pred = forward(x[:, :, ids], ids, self.model.params, self.config, rng, training=True)
            sq = ((pred - y[:, ids]) ** 2).sum()
            total = sq if total is None else total + sq
        return ag.scale(total, 1.0 / y.size)

    def predict(self, x, eval_seed: int) -> np.ndarray:
        return predict_target(self.model.params, x, self.config, np.random.default_rng(eval_seed))


class _DlinearRun:
    def __init__(self, config: DlinearConfig, target_channel: int, seed: int):
        self.config = config
        self.target = target_channel
        self.model = Dlinear(config, seed=seed)

    @property
    def params(self):
        return self.model.params

    def batch_loss(self, x, y, rng) -> Tensor:
        return mse_loss(self.model.forward(x), y)

    def predict(self, x, eval_seed: int) -> np.ndarray:
        return self.model.predict(x)[:, self.target]


@dataclass
class TrainResult:
    model: object
    history: TrainHistory
    seed: int


def train(kind: str, data: PreparedData, model_config, train_config: TrainConfig,
          seed: int) -> TrainResult:
    """Train one model for one seed and keep the best-validation parameters.

    ``kind`` is ``"pmformer"`` or ``"dlinear"``. Validation MSE is measured
    on the target channel after undoing the scaling.
    """
    if kind == "pmformer":
        run = _PmformerRun(model_config, seed)
    elif kind == "dlinear":
        run = _DlinearRun(model_config, data.target_channel, seed)
    else:
        raise ConfigError(f"no gradient training for model kind {kind!r}")
    if len(data.train_x) == 0 or len(data.val_x) == 0:
        raise EmptyDataError("training and validation splits must both contain windows")

    rng = np.random.default_rng(seed)
    opt = ag.Adam(run.params, train_config.lr)
    history = TrainHistory()
    best = {k: v.data.copy() for k, v in run.params.items()}
    actual_val = data.unscale_target(data.val_y[:, data.target_channel])
    n = len(data.train_x)
    stale = 0

    for epoch in range(train_config.epochs):
        started = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            loss = run.batch_loss(data.train_x[idx], data.train_y[idx], rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch starting {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += value * len(idx)

        pred_val = data.unscale_target(run.predict(data.val_x, train_config.eval_seed))
        val_mse = evaluate_statistics(pred_val, actual_val)[0]
        history.train_loss.append(loss_sum / n)
        history.val_mse.append(val_mse)
        history.epoch_seconds.append(time.perf_counter() - started)
        logger.debug("seed %d epoch %d train %.6g val %.6g", seed, epoch, loss_sum / n, val_mse)

        if val_mse < history.best_val_mse:
            history.best_epoch = epoch
            best = {k: v.data.copy() for k, v in run.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                break

    for k, v in run.params.items():
        v.data = best[k]
    return TrainResult(run.model, history, seed)


def predict_test(model, data: PreparedData, eval_seed: int = 0) -> np.ndarray:
    """Target predictions on the test windows, on the original return scale."""
    if isinstance(model, Pmformer):
        scaled = predict_target(model.params, data.test_x, model.config,
                                np.random.default_rng(eval_seed))
    elif isinstance(model, Dlinear):
        scaled = model.predict(data.test_x)[:, data.target_channel]
    else:
        raise ConfigError(f"unsupported model {type(model).__name__}")
    return data.unscale_target(scaled)


# -- random search ------------------------------------------------------------------

DEFAULT_SPACE: dict[str, tuple] = {
    "lr": ("loguniform", 1e-5, 1e-3),
    "batch_size": ("choice", [32, 64, 128]),
    "dropout": ("choice", [0.1, 0.2, 0.3, 0.4, 0.7]),
    "seq_len": ("choice", [24, 48, 96, 192]),
    "label_len": ("choice", [12, 24, 48, 96]),
    "dim": ("choice", [32, 64, 128, 256, 512]),
    "d_ff": ("choice", [32, 64, 128, 256, 512]),
    "n_layers": ("choice", [1, 2, 3, 4]),
    "decoder_layers": ("choice", [1, 2, 3]),
    "n_heads": ("choice", [2, 4, 8, 16]),
}


def _check_space(space: Mapping[str, tuple]) -> None:
    if not space:
        raise ConfigError("search space is empty")
    for name, spec in space.items():
        kind = spec[0] if spec else None
        if kind == "loguniform":
            if len(spec) != 3 or not 0 < spec[1] <= spec[2]:
                raise ConfigError(f"{name}: loguniform needs 0 < low <= high")
        elif kind == "uniform":
            if len(spec) != 3 or spec[1] > spec[2]:
                raise ConfigError(f"{name}: uniform needs low <= high")
        elif kind == "choice":
            if len(spec) != 2 or not list(spec[1]):
                raise ConfigError(f"{name}: choice needs a non-empty option list")
        else:
            raise ConfigError(f"{name}: unknown distribution {kind!r}")


def _satisfies_constraints(cfg: Mapping) -> bool:
    if "label_len" in cfg and "seq_len" in cfg and not cfg["label_len"] < cfg["seq_len"]:
        return False
    if "dim" in cfg and "n_heads" in cfg and cfg["dim"] % cfg["n_heads"]:
        return False
    return True


def sample_config(space: Mapping[str, tuple], rng: np.random.Generator,
                  max_tries: int = 1000) -> dict:
    """Draw one configuration, redrawing until LL < SL and Dim % H == 0."""
    _check_space(space)
    for _ in range(max_tries):
        cfg = {}
        for name, spec in space.items():
            if spec[0] == "loguniform":
                cfg[name] = float(math.exp(rng.uniform(math.log(spec[1]), math.log(spec[2]))))
            elif spec[0] == "uniform":
                cfg[name] = float(rng.uniform(spec[1], spec[2]))
            else:
                options = list(spec[1])
                value = options[int(rng.integers(len(options)))]
                cfg[name] = value.item() if isinstance(value, np.generic) else value
        if _satisfies_constraints(cfg):
            return cfg
    raise ConfigError("search space constraints could not be satisfied")


@dataclass(frozen=True)
class SearchResult:
    config: dict
    seed_scores: tuple[float, ...]

    @property
    def mean_val_mse(self) -> float:
        return float(np.mean(self.seed_scores))


def random_search(space: Mapping[str, tuple], trials: int, rng: np.random.Generator,
                  objective: Callable[[dict], Sequence[float] | float]) -> list[SearchResult]:
    """Evaluate ``trials`` sampled configs; best (lowest mean validation MSE) first.

    ``objective`` returns the validation MSE for each configured seed (or a
    single float).
    """
    if trials < 1:
        raise ConfigError("random search needs at least one trial")
    results = []
    for _ in range(trials):
        cfg = sample_config(space, rng)
        scores = objective(cfg)
        scores = (float(scores),) if np.isscalar(scores) else tuple(float(s) for s in scores)
        results.append(SearchResult(cfg, scores))
    # Stable sort keeps sampling order among ties.
    return sorted(results, key=lambda r: (math.isnan(r.mean_val_mse), r.mean_val_mse))
