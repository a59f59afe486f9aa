"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 diverged run.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from .data import NormalizationParams, build_dataset, ingest
from .errors import ConfigError, ContractError, DataError, DivergedError
from .experiment import (
    ExperimentConfig, SweepCell, SweepResult, TrialOutcome, compare_models, parse_overrides,
    run_sweep, run_trial,
)
from .metrics import EvalReport, aggregate
from .models import load_checkpoint, save_checkpoint
from .report import _write_csv, emit_outputs, fmt, render_svg

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value config file")
    common.add_argument("--data", help="dataset file (.json or .csv)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="base seed; trial k uses seed+k")
    common.add_argument("--trials", type=int, help="trials per cell (best-of-k for compare)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="deepcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train and evaluate one configuration")
    sub.add_parser("sweep", parents=[common], help="grid over sweep_axis x placements")
    sub.add_parser("compare", parents=[common], help="best-of-k transformer vs LSTM vs RNN")
    p = sub.add_parser("predict", parents=[common], help="forecast the test split with a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def load_config(args) -> ExperimentConfig:
    overrides = parse_overrides(args.overrides)
    flags = {"data": args.data, "out": args.out, "seed": args.seed, "trials": args.trials}
    for key, value in flags.items():
        if value is not None and key not in overrides:
            overrides[key] = str(value)
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        cfg = ExperimentConfig.from_file(args.config, overrides)
    else:
        cfg = ExperimentConfig.from_mapping(overrides)
    if args.trials is not None and (args.command == "compare" or cfg.protocol == "best"):
        # under best-of-k, --trials sets k
        cfg = dataclasses.replace(cfg, best_of=args.trials)
    return cfg


def cmd_train(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    records = ingest(cfg.data, cfg.format) if cfg.data else None
    if records is None:
        raise ConfigError("no dataset given (set 'data' in the config or pass --data)")
    reports, wall = [], []
    for trial in range(cfg.trials):
        seed = cfg.seed + trial
        start = time.perf_counter()
        report, model, dataset = run_trial(cfg, seed, trial, records, return_model=True)
        wall.append(int(round((time.perf_counter() - start) * 1000)))
        save_checkpoint(model, out / f"model_seed{seed}.npz", extra={
            "norm": dataset.norm.to_dict(), "test_days": cfg.test_days, "train_frac": cfg.train_frac,
            "seed": seed,
        })
        print(f"trial {trial} seed {seed}: MAPE {report.mape:.3f}")
        reports.append(report)
    result = _single_cell_result(cfg, reports, wall)
    emit_outputs(result, out, plot=cfg.plot)
    summary = result.cells[0].summary
    print(f"mean MAPE {summary.mean_mape:.3f} (std {summary.std_mape:.3f}) over {summary.n_trials} trial(s)")
    return EXIT_OK


def _single_cell_result(cfg, reports, wall):
    placement = cfg.norm_placement if cfg.family == "transformer" else "-"
    cell = SweepCell(cfg.family, cfg.family, placement, cfg.family)
    cell.outcomes = [TrialOutcome(r.trial_id, r.seed, r, "ok", ms, cfg.epochs_for(cfg.family))
                     for r, ms in zip(reports, wall)]
    cell.summary = aggregate(reports, ddof=cfg.std_ddof)
    return SweepResult("train", [cell])


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if cfg.sweep_axis is None:
        raise ConfigError("sweep needs sweep_axis and sweep_values")
    result = run_sweep(cfg)
    emit_outputs(result, cfg.out, plot=cfg.plot)
    for label in result.labels():
        cells = [c for c in result.cells if c.label == label]
        parts = "  ".join(f"{c.placement}={c.mean_mape:.3f}±{c.std_mape:.3f}" for c in cells)
        flag = "  *" if label == result.best_label() else ""
        print(f"{result.axis}={label}: {parts}  mean={result.score(label):.3f}{flag}")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig) -> int:
    result = compare_models(cfg)
    emit_outputs(result, cfg.out, plot=cfg.plot)
    for cell in result.cells:
        print(f"{cell.label}: best MAPE {cell.best_mape:.3f} (mean {cell.mean_mape:.3f}, k={len(cell.outcomes)})")
    return EXIT_OK


def cmd_predict(cfg: ExperimentConfig, checkpoint: Path) -> int:
    model, extra = load_checkpoint(checkpoint)
    if cfg.data is None:
        raise ConfigError("predict needs --data")
    mc = model.config
    records = ingest(cfg.data, cfg.format)
    dataset = build_dataset(records, lag=mc.time_lag, horizon=mc.horizon, n_features=mc.n_features,
                            test_days=extra.get("test_days", cfg.test_days),
                            train_frac=extra.get("train_frac", cfg.train_frac))
    norm = NormalizationParams.from_dict(extra["norm"]) if "norm" in extra else dataset.norm
    pred = dataset.assemble(norm.denormalize(model.predict(norm.normalize(_test_inputs(dataset))), 0))
    report = EvalReport.from_predictions(dataset.test_dates, dataset.test_actual, pred)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "predictions.csv", ("date", "actual", "predicted"),
               ([d.isoformat(), fmt(a), fmt(p)] for d, a, p in zip(report.dates, report.actual, report.predicted)))
    if cfg.plot:
        (out / "plot_predict.svg").write_text(
            render_svg(report.dates, report.actual, pred, pred, pred, title="forecast"), encoding="utf-8")
    print(f"MAPE {report.mape:.3f} over {len(pred)} test days")
    return EXIT_OK


def _test_inputs(dataset):
    """Raw-unit test windows, so a checkpoint's own scaling can be applied."""
    lag = dataset.lag
    return [dataset.raw[s - lag:s] for s in dataset.test_block_starts]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        return cmd_predict(cfg, args.checkpoint)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
