"""Partial-multivariate transformer over feature subsets.

A window of ``seq_len`` steps for a subset of ``S`` features becomes an
``S x seq_len`` grid of tokens. Each encoder block runs temporal attention
(per feature, across time), then feature attention (per time step, across
features), then an MLP, and adds the result back to its input. A linear
head shared by all features maps each feature's flattened token sequence to
its next-step value.

Tensors carry a leading batch axis internally: tokens are (B, S, SL, dim).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError, SubsetError

logger = logging.getLogger(__name__)

Params = dict[str, Tensor]


@dataclass(frozen=True)
class PmformerConfig:
    n_features: int = 16
    subset_size: int = 4
    seq_len: int = 48
    dim: int = 64
    n_heads: int = 16
    d_ff: int = 128
    n_layers: int = 4
    dropout: float = 0.0
    target_channel: int = 15
    ensemble_k: int = 8
    # Accepted so tabulated configs load unchanged; a linear head has no use for them.
    decoder_layers: int | None = None
    label_len: int | None = None

    def __post_init__(self):
        if not 1 < self.subset_size < self.n_features:
            raise ConfigError(
                f"subset size must satisfy 1 < S < D, got S={self.subset_size}, D={self.n_features}")
        if self.dim % self.n_heads:
            raise ConfigError(f"dim {self.dim} is not divisible by {self.n_heads} heads")
        if self.seq_len < 1 or self.n_layers < 0 or self.d_ff < 1:
            raise ConfigError("seq_len and d_ff must be positive, n_layers non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0 <= self.target_channel < self.n_features:
            raise ConfigError(f"target channel {self.target_channel} out of range")
        if self.ensemble_k < 1:
            raise ConfigError("ensemble_k must be >= 1")

    def warn_ignored(self) -> None:
        if self.decoder_layers:
            logger.warning("decoder_layers=%s ignored: the decoder is a single linear head",
                           self.decoder_layers)
        if self.label_len:
            logger.warning("label_len=%s ignored for one-step forecasting", self.label_len)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "PmformerConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigError(f"unknown PMformer config keys: {sorted(unknown)}")
        return cls(**raw)


def _normal(rng: np.random.Generator, shape, std: float) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def _linear_init(rng, fan_in: int, fan_out: int) -> Tensor:
    return _normal(rng, (fan_in, fan_out), math.sqrt(2.0 / (fan_in + fan_out)))


def init_params(config: PmformerConfig, rng: np.random.Generator) -> Params:
    d = config.dim
    p: Params = {
        "embed.value": _normal(rng, (d,), 1.0),
        "embed.time": _normal(rng, (config.seq_len, d), 0.1),
        "embed.feat": _normal(rng, (config.n_features, d), 0.1),
    }
    for layer in range(config.n_layers):
        for part in ("ta", "fa"):
            pre = f"blocks.{layer}.{part}."
            p[pre + "norm.gamma"] = _ones(d)
            p[pre + "norm.beta"] = _zeros(d)
            for proj in ("q", "k", "v", "o"):
                p[pre + "w" + proj] = _linear_init(rng, d, d)
                p[pre + "b" + proj] = _zeros(d)
        pre = f"blocks.{layer}.mlp."
        p[pre + "norm.gamma"] = _ones(d)
        p[pre + "norm.beta"] = _zeros(d)
        p[pre + "w1"] = _linear_init(rng, d, config.d_ff)
        p[pre + "b1"] = _zeros(config.d_ff)
        p[pre + "w2"] = _linear_init(rng, config.d_ff, d)
        p[pre + "b2"] = _zeros(d)
    flat = config.seq_len * d
    p["head.w"] = _normal(rng, (flat, 1), 1.0 / math.sqrt(flat))
    p["head.b"] = _zeros(1)
    return p


def check_subset(feature_ids: Sequence[int], n_features: int) -> np.ndarray:
    ids = np.asarray(feature_ids, dtype=np.intp)
    if ids.ndim != 1 or ids.size == 0:
        raise SubsetError("feature ids must be a non-empty 1-D sequence")
    if len(set(ids.tolist())) != ids.size:
        raise SubsetError(f"duplicate feature ids in {ids.tolist()}")
    if ids.min() < 0 or ids.max() >= n_features:
        raise SubsetError(f"feature ids {ids.tolist()} outside [0, {n_features})")
    return ids


def embed_tokens(window, feature_ids: Sequence[int], params: Params) -> Tensor:
    """Token (s, t) = value_proj * x[t, s] + time[t] + feat[feature_ids[s]].

    ``window`` is (SL, S) or (B, SL, S); the result is (S, SL, dim) or
    (B, S, SL, dim) accordingly.
    """
    x = window if isinstance(window, Tensor) else Tensor(window)
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    time_table, feat_table = params["embed.time"], params["embed.feat"]
    ids = check_subset(feature_ids, feat_table.shape[0])
    b, sl, s = x.shape
    if sl != time_table.shape[0] or s != ids.size:
        raise ShapeError(f"window {x.shape[-2:]} does not match (SL={time_table.shape[0]}, S={ids.size})")
    dim = time_table.shape[1]
    values = ag.transpose(x, (0, 2, 1)).reshape(b, s, sl, 1)
    tokens = values * params["embed.value"] + time_table
    tokens = tokens + feat_table[ids].reshape(s, 1, dim)
    return tokens[0] if single else tokens


def multi_head_attention(x: Tensor, params: Params, prefix: str, n_heads: int,
                         return_weights: bool = False):
    """Pre-norm self-attention across the second-to-last axis of ``x``."""
    *lead, n, dim = x.shape
    if dim % n_heads:
        raise ShapeError(f"width {dim} is not divisible by {n_heads} heads")
    dh = dim // n_heads
    h = ag.layer_norm(x, params[prefix + "norm.gamma"], params[prefix + "norm.beta"])

    def heads(name):
        proj = h @ params[prefix + "w" + name] + params[prefix + "b" + name]
        return ag.swapaxes(proj.reshape(tuple(lead) + (n, n_heads, dh)), -3, -2)

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = ag.scale(q @ ag.swapaxes(k, -1, -2), 1.0 / math.sqrt(dh))
    weights = ag.softmax(scores)
    context = ag.swapaxes(weights @ v, -3, -2).reshape(tuple(lead) + (n, dim))
    out = context @ params[prefix + "wo"] + params[prefix + "bo"]
    return (out, weights) if return_weights else out


def _check_tokens(tokens: Tensor) -> None:
    if tokens.ndim not in (3, 4):
        raise ShapeError(f"tokens must be (S, SL, dim) or (B, S, SL, dim), got {tokens.shape}")


def temporal_attention(tokens: Tensor, params: Params, layer: int, n_heads: int,
                       return_weights: bool = False):
    """Self-attention over time, independently for every feature."""
    _check_tokens(tokens)
    return multi_head_attention(tokens, params, f"blocks.{layer}.ta.", n_heads, return_weights)


def feature_attention(tokens: Tensor, params: Params, layer: int, n_heads: int,
                      return_weights: bool = False):
    """Self-attention over features, independently for every time step."""
    _check_tokens(tokens)
    swapped = ag.swapaxes(tokens, -3, -2)
    res = multi_head_attention(swapped, params, f"blocks.{layer}.fa.", n_heads, return_weights)
    if return_weights:
        return ag.swapaxes(res[0], -3, -2), res[1]
    return ag.swapaxes(res, -3, -2)


def mlp(x: Tensor, params: Params, layer: int) -> Tensor:
    pre = f"blocks.{layer}.mlp."
    h = ag.layer_norm(x, params[pre + "norm.gamma"], params[pre + "norm.beta"])
    h = ag.gelu(h @ params[pre + "w1"] + params[pre + "b1"])
    return h @ params[pre + "w2"] + params[pre + "b2"]


def encoder_block(tokens: Tensor, params: Params, layer: int, n_heads: int,
                  dropout: float = 0.0, rng: np.random.Generator | None = None,
                  training: bool = False) -> Tensor:
    """``H + MLP(FA(TA(H)))`` with dropout after each sublayer at train time."""
    keep = 1.0 - dropout

    def drop(t):
        return ag.dropout(t, keep, rng, training)

    branch = drop(temporal_attention(tokens, params, layer, n_heads))
    branch = drop(feature_attention(branch, params, layer, n_heads))
    branch = drop(mlp(branch, params, layer))
    if branch.shape != tokens.shape:
        raise ShapeError(f"block output {branch.shape} vs input {tokens.shape}")
    return tokens + branch


def forward(window, feature_ids: Sequence[int], params: Params, config: PmformerConfig,
            rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Next-step prediction for every subset feature, ordered as ``feature_ids``.

    ``window`` (SL, S) gives an (S,) output; (B, SL, S) gives (B, S).
    """
    tokens = embed_tokens(window, feature_ids, params)
    single = tokens.ndim == 3
    if single:
        tokens = tokens.reshape((1,) + tokens.shape)
    for layer in range(config.n_layers):
        tokens = encoder_block(tokens, params, layer, config.n_heads, config.dropout, rng, training)
    b, s, sl, dim = tokens.shape
    out = tokens.reshape(b, s, sl * dim) @ params["head.w"] + params["head.b"]
    out = out.reshape(b, s)
    return out.reshape(s) if single else out


def draw_target_subsets(n_features: int, subset_size: int, target: int, k: int,
                        rng: np.random.Generator) -> list[np.ndarray]:
    """K subsets that each start with ``target`` plus S-1 uniformly drawn others."""
    if subset_size > n_features:
        raise ConfigError(f"subset size {subset_size} exceeds feature count {n_features}")
    if not 0 <= target < n_features:
        raise SubsetError(f"target channel {target} outside [0, {n_features})")
    others = np.array([i for i in range(n_features) if i != target], dtype=np.intp)
    return [np.concatenate([[target], rng.choice(others, subset_size - 1, replace=False)])
            for _ in range(k)]


def predict_target(params: Params, full_window, config: PmformerConfig,
                   rng: np.random.Generator, k: int | None = None,
                   target: int | None = None):
    """Mean target prediction over K random target-containing subsets.

    The same K subsets are used for every window of a batched (B, SL, D)
    input; a single (SL, D) window returns a float.
    """
    k = config.ensemble_k if k is None else k
    target = config.target_channel if target is None else target
    if k < 1:
        raise ConfigError("ensemble size must be >= 1")
    x = np.asarray(full_window, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[-1] != config.n_features:
        raise ShapeError(f"window has {x.shape[-1]} channels, model expects {config.n_features}")
    subsets = draw_target_subsets(config.n_features, config.subset_size, target, k, rng)
    total = np.zeros(x.shape[0])
    with ag.no_grad():
        for ids in subsets:
            total += forward(x[:, :, ids], ids, params, config).data[:, 0]
    out = total / k
    return float(out[0]) if single else out


class Pmformer:
    """Config plus parameter table; convenience wrapper over the functions above."""

    def __init__(self, config: PmformerConfig, params: Params | None = None,
                 seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(
            config, np.random.default_rng(seed))

    def forward(self, window, feature_ids, rng=None, training=False) -> Tensor:
        return forward(window, feature_ids, self.params, self.config, rng, training)

    def predict_target(self, full_window, rng, k=None):
        return predict_target(self.params, full_window, self.config, rng, k)

    def copy_params(self) -> Params:
        return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}

    def checkpoint_header(self, channel_names: Sequence[str] | None = None) -> dict:
        return {"model": "pmformer", "config": self.config.to_dict(),
                "channel_names": list(channel_names or [])}

    def save(self, path, channel_names=None) -> None:
        ag.save_checkpoint(path, self.params, self.checkpoint_header(channel_names))

    @classmethod
    def load(cls, path) -> "Pmformer":
        header, arrays = ag.load_checkpoint(path)
        if header.get("model") != "pmformer":
            raise ConfigError(f"{path} is not a PMformer checkpoint")
        config = PmformerConfig.from_dict(header["config"])
        params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        expected = init_params(config, np.random.default_rng(0))
        for name, t in expected.items():
            if name not in params or params[name].shape != t.shape:
                raise ShapeError(f"checkpoint parameter {name} missing or mis-shaped")
        return cls(config, params)
