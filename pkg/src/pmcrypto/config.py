"""Run configuration files and the bundled hyperparameter presets.

Config files are YAML with nested sections. The ``hyper`` section uses the
column names of the tuned hyperparameter tables (``LR``, ``BS``, ``SL``,
``LL``, ``layers``, ``Dim``, ``H``, ``d_ff``, ``D``), where ``D`` is the
dropout rate and ``layers`` holds encoder/decoder depth as ``{e: .., d: ..}``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .baselines import DlinearConfig
from .errors import ConfigError
from .pmformer import PmformerConfig
from .training import DEFAULT_SEEDS, TrainConfig

MODEL_KINDS = ("pmformer", "naive", "ar", "dlinear")

DEFAULTS: dict[str, Any] = {
    "run": {
        "model": "pmformer",
        "asset": "",
        "data": None,
        "target": "log_return",
        "seeds": list(DEFAULT_SEEDS),
        "split": [0.7, 0.2, 0.1],
    },
    "hyper": {},
    "pmformer": {"subset_size": 4, "ensemble_k": 8},
    "dlinear": {"moving_avg": 25},
    "train": {"epochs": 100, "patience": 10, "eval_seed": 0},
    "backtest": {"cost_per_side": 0.0},
    # Optional search space, e.g. {lr: [loguniform, 1e-5, 1e-3], BS: [choice, [32, 64]]}.
    "search": None,
}


def available_presets() -> list[str]:
    root = resources.files("pmcrypto") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    raw: dict
    source: str = ""
    n_features: int = 16
    target_channel: int = 15
    channel_names: list[str] = field(default_factory=list)

    # -- plain accessors -------------------------------------------------------
    @property
    def model(self) -> str:
        return self.raw["run"]["model"]

    @property
    def asset(self) -> str:
        return self.raw["run"].get("asset") or ""

    @property
    def data(self) -> str | None:
        return self.raw["run"].get("data")

    @property
    def target(self) -> str:
        return self.raw["run"]["target"]

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(int(s) for s in self.raw["run"]["seeds"])

    @property
    def split(self) -> tuple[float, float, float]:
        return tuple(float(r) for r in self.raw["run"]["split"])

    @property
    def hyper(self) -> dict:
        return self.raw["hyper"]

    @property
    def seq_len(self) -> int:
        return int(self.hyper.get("SL") or 48)

    @property
    def cost_per_side(self) -> float:
        return float(self.raw["backtest"]["cost_per_side"])

    # -- typed views ------------------------------------------------------------
    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(
            lr=float(self.hyper.get("LR", 1e-4)),
            batch_size=int(self.hyper.get("BS", 64)),
            epochs=int(t["epochs"]),
            patience=int(t["patience"]),
            seeds=self.seeds,
            eval_seed=int(t["eval_seed"]),
        )

    def pmformer_config(self) -> PmformerConfig:
        h, p = self.hyper, self.raw["pmformer"]
        layers = h.get("layers") or {}
        if not isinstance(layers, Mapping):
            layers = {"e": layers}
        return PmformerConfig(
            n_features=self.n_features,
            subset_size=int(p["subset_size"]),
            seq_len=self.seq_len,
            dim=int(h.get("Dim", 64)),
            n_heads=int(h.get("H", 16)),
            d_ff=int(h.get("d_ff", 128)),
            n_layers=int(layers.get("e", 4)),
            dropout=float(h.get("D", 0.0)),
            target_channel=self.target_channel,
            ensemble_k=int(p["ensemble_k"]),
            decoder_layers=layers.get("d"),
            label_len=h.get("LL"),
        )

    def dlinear_config(self) -> DlinearConfig:
        h = self.hyper
        return DlinearConfig(
            seq_len=self.seq_len,
            n_channels=self.n_features,
            moving_avg=min(int(self.raw["dlinear"]["moving_avg"]), self.seq_len),
            individual=bool(h.get("individual", 1)),
            lr=float(h.get("LR", 7.33e-4)),
            batch_size=int(h.get("BS", 64)),
        )

    def ar_orders(self) -> tuple[int, int, int]:
        h = self.hyper
        return int(h.get("p", 2)), int(h.get("d", 0)), int(h.get("q", 0))

    def bind_channels(self, channel_names) -> None:
        """Fix feature count and target index from the loaded matrix."""
        names = list(channel_names)
        if self.target not in names:
            raise ConfigError(f"target channel {self.target!r} not among {names}")
        self.channel_names = names
        self.n_features = len(names)
        self.target_channel = names.index(self.target)

    def copy(self) -> "RunConfig":
        return RunConfig(copy.deepcopy(self.raw), self.source, self.n_features,
                         self.target_channel, list(self.channel_names))

    def with_seed(self, seed: int) -> "RunConfig":
        out = self.copy()
        out.raw["run"]["seeds"] = [int(seed)]
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)

    def table_echo(self) -> str:
        """Key-value summary using the hyperparameter table field names."""
        h = self.hyper
        lines = [f"model = {self.model}", f"asset = {self.asset}"]
        for key in ("LR", "BS", "SL", "LL", "layers", "Dim", "H", "d_ff", "D", "p", "d", "q",
                    "individual"):
            if key in h:
                value = h[key]
                if isinstance(value, Mapping):
                    value = ", ".join(f"{k}={v}" for k, v in value.items())
                lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def validate(raw: Mapping) -> None:
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    model = raw["run"]["model"]
    if model not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {model!r} (expected one of {', '.join(MODEL_KINDS)})")
    if not raw["run"]["seeds"]:
        raise ConfigError("run.seeds must list at least one seed")
    if raw["run"].get("data") is not None and not Path(raw["run"]["data"]).exists():
        raise ConfigError(f"data file {raw['run']['data']} does not exist")


def load_config(source: str | Path | None) -> RunConfig:
    """Load a config file path or a bundled preset name; ``None`` gives defaults."""
    if source is None:
        override, label = {}, "<defaults>"
    else:
        path = Path(source)
        if path.exists():
            text, label = path.read_text(), str(path)
        elif str(source) in available_presets():
            text = (resources.files("pmcrypto") / "presets" / f"{source}.yaml").read_text()
            label = f"preset:{source}"
        else:
            raise ConfigError(f"config {source!r} is neither a file nor a preset "
                              f"({', '.join(available_presets())})")
        try:
            override = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{label}: {exc}") from None
        if not isinstance(override, Mapping):
            raise ConfigError(f"{label}: top level must be a mapping")
    raw = _merge(DEFAULTS, override)
    validate(raw)
    return RunConfig(raw, label)
