"""Command-line pipeline: features -> train -> backtest -> compare.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .backtest import REPORT_FIELDS, BacktestReport, build_report
from .baselines import ArModel, Dlinear, fit_ar, predict_ar
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, NumericError, PmcryptoError
from .indicators import FeatureMatrix, build_feature_matrix
from .market_data import read_klines
from .pmformer import Pmformer
from .training import DEFAULT_SPACE, PreparedData, prepare_data, predict_test, random_search, train

logger = logging.getLogger("pmcrypto")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        self.stage, self.cause = stage, cause
        super().__init__(f"{stage}: {cause}")


# -- helpers -------------------------------------------------------------------------


def load_matrix(path: str | Path) -> FeatureMatrix:
    """Read either an exported feature CSV or a raw kline CSV."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input not found: {path}")
    first = path.read_text().split("\n", 1)[0]
    if first.startswith("date,") or "log_return" in first.split(","):
        return FeatureMatrix.read_csv(path)
    return build_feature_matrix(read_klines(path))


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "data", None):
        cfg.raw["run"]["data"] = args.data
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if not cfg.data:
        raise ConfigError("no data file: pass --data or set run.data")
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: RunConfig, out: Path) -> None:
    (out / "resolved_config.yaml").write_text(cfg.to_yaml())


def _prepare(cfg: RunConfig) -> tuple[FeatureMatrix, PreparedData]:
    matrix = load_matrix(cfg.data)
    cfg.bind_channels(matrix.channel_names)
    seq_len = cfg.seq_len if cfg.model in ("pmformer", "dlinear") else max(cfg.ar_orders()[0], 1)
    return matrix, prepare_data(matrix, seq_len, cfg.target_channel, cfg.split)


def predict_test_split(cfg: RunConfig, matrix: FeatureMatrix, data: PreparedData,
                     checkpoint: str | None, eval_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(predictions, actual returns) on the test rows, original scale."""
    raw = matrix.values[:, cfg.target_channel]
    rows = data.test_rows
    actual = raw[rows]
    if cfg.model == "naive":
        return raw[rows - 1].copy(), actual
    if checkpoint is None:
        raise ConfigError(f"model kind {cfg.model!r} needs --checkpoint")
    if cfg.model == "ar":
        model = ArModel.load(checkpoint)
        return np.array([predict_ar(model, raw[:k]) for k in rows]), actual
    model = Pmformer.load(checkpoint) if cfg.model == "pmformer" else Dlinear.load(checkpoint)
    return predict_test(model, data, eval_seed), actual


# -- commands --------------------------------------------------------------------------


def cmd_features(args) -> int:
    try:
        matrix = load_matrix(args.input)
    except DataError as exc:
        raise StageError("features", exc) from exc
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    matrix.to_csv(args.output)
    print(f"wrote {matrix.shape[0]} rows x {matrix.shape[1]} channels to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    matrix, data = _prepare(cfg)
    _write_config(cfg, out)
    (out / "best_config.txt").write_text(cfg.table_echo())
    data.scaler.save(out / "scaler.txt")
    summary: dict = {"model": cfg.model, "asset": cfg.asset, "seeds": {}}

    if cfg.model == "naive":
        logger.info("naive repeat has no parameters to fit")
    elif cfg.model == "ar":
        p, d, q = cfg.ar_orders()
        if q != 0:
            raise ConfigError("moving-average order q must be 0")
        model = fit_ar(matrix.values[: data.split.train_end, cfg.target_channel], p, d)
        model.save(out / "ar.txt")
    else:
        tc = cfg.train_config()
        model_cfg = cfg.pmformer_config() if cfg.model == "pmformer" else cfg.dlinear_config()
        if cfg.model == "pmformer":
            model_cfg.warn_ignored()
        for seed in tc.seeds:
            result = train(cfg.model, data, model_cfg, tc, seed)
            result.model.save(out / f"model_seed{seed}.ckpt", cfg.channel_names)
            result.history.to_csv(out / f"history_seed{seed}.csv")
            summary["seeds"][str(seed)] = {"best_epoch": result.history.best_epoch,
                                           "val_mse": result.history.best_val_mse}
            print(f"seed {seed}: best epoch {result.history.best_epoch}, "
                  f"val MSE {result.history.best_val_mse:.6g}")
        scores = [s["val_mse"] for s in summary["seeds"].values()]
        summary["mean_val_mse"] = float(np.mean(scores)) if scores else None
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_backtest(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    matrix, data = _prepare(cfg)
    preds, actual = predict_test_split(cfg, matrix, data, args.checkpoint,
                                     int(cfg.raw["train"]["eval_seed"]))
    label = args.label or cfg.model
    report, curve = build_report(preds, actual, label, cfg.asset, cfg.cost_per_side)
    _write_config(cfg, out)
    report.save(out / "report.json")
    dates = [matrix.dates[r] for r in data.test_rows] if matrix.dates else None
    curve.to_csv(out / "equity.csv", dates)
    print(report.to_json(), end="")
    return EXIT_OK


_HIGHER_IS_BETTER = {"total_roi_pct": True, "sharpe": True, "max_drawdown_pct": True,
                     "directional_accuracy_pct": True, "mse": False, "rmse": False, "mae": False}


def compare_reports(reports: Sequence[BacktestReport]) -> str:
    """Metrics as rows, models as columns; the best value per row carries ``*``."""
    if not reports:
        raise ConfigError("nothing to compare")
    assets = sorted({r.asset for r in reports if r.asset})
    if len(assets) > 1:
        logger.warning("reports cover different assets: %s", ", ".join(assets))
    names = [r.model or f"model{i}" for i, r in enumerate(reports)]
    rows = [["metric"] + names]
    for field in REPORT_FIELDS:
        values = [getattr(r, field) for r in reports]
        best = None
        if field in _HIGHER_IS_BETTER:
            finite = [v for v in values if not math.isnan(v)]
            if finite:
                best = max(finite) if _HIGHER_IS_BETTER[field] else min(finite)
        cells = []
        for v in values:
            cell = str(v) if field == "n_days" else ("nan" if math.isnan(v) else f"{v:.6g}")
            cells.append(cell + ("*" if best is not None and v == best else ""))
        rows.append([field] + cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    if assets:
        lines.insert(0, f"asset: {', '.join(assets)}")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        if not Path(path).exists():
            raise DataError(f"input not found: {path}")
        reports.append(BacktestReport.load(path))
    table = compare_reports(reports)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _resolve(args)
    if cfg.model not in ("pmformer", "dlinear"):
        raise ConfigError(f"random search needs a trainable model, got {cfg.model!r}")
    out = _out_dir(args)
    matrix = load_matrix(cfg.data)
    cfg.bind_channels(matrix.channel_names)
    space = cfg.raw.get("search") or DEFAULT_SPACE

    key_map = {"lr": "LR", "batch_size": "BS", "seq_len": "SL", "label_len": "LL", "dim": "Dim",
               "n_heads": "H", "d_ff": "d_ff", "dropout": "D"}

    def objective(sample: dict) -> list[float]:
        trial = cfg.copy()
        layers = dict(trial.hyper.get("layers") or {})
        for key, value in sample.items():
            if key == "n_layers":
                layers["e"] = value
            elif key == "decoder_layers":
                layers["d"] = value
            else:
                trial.hyper[key_map.get(key, key)] = value
        if layers:
            trial.hyper["layers"] = layers
        data = prepare_data(matrix, trial.seq_len, trial.target_channel, trial.split)
        model_cfg = trial.pmformer_config() if cfg.model == "pmformer" else trial.dlinear_config()
        tc = trial.train_config()
        return [train(cfg.model, data, model_cfg, tc, s).history.best_val_mse for s in tc.seeds]

    results = random_search(space, args.trials, np.random.default_rng(cfg.seeds[0]), objective)
    payload = [{"config": r.config, "seed_val_mse": list(r.seed_scores),
                "mean_val_mse": r.mean_val_mse} for r in results]
    _write_config(cfg, out)
    (out / "search_results.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    for rank, r in enumerate(results, 1):
        print(f"{rank}. mean val MSE {r.mean_val_mse:.6g}  {r.config}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def common_flags(default):
        # Sub-commands suppress their defaults so flags given before the
        # command name are not reset.
        flags = argparse.ArgumentParser(add_help=False)
        flags.add_argument("--config", default=default, help="config file or preset name")
        flags.add_argument("--seed", type=int, default=default,
                           help="override the configured seeds with one seed")
        flags.add_argument("--out", default=default, help="output directory (file for compare)")
        flags.add_argument("-v", "--verbose", action="store_true",
                           default=False if default is None else default)
        return flags

    top, common = common_flags(None), common_flags(argparse.SUPPRESS)

    parser = _Parser(prog="pmcrypto", description=__doc__.splitlines()[0], parents=[top])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("features", parents=[common], help="build the feature matrix CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="train across the configured seeds")
    p.add_argument("--data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", parents=[common], help="report on the test split")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--label", help="model name written into the report")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("compare", parents=[common], help="tabulate several reports")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("search", parents=[common], help="random hyperparameter search")
    p.add_argument("--data")
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_search)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error in {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, DataError) else EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, PmcryptoError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
