"""Command line entry point ``nrf``.

Exit status is 0 on success, 1 for usage or configuration errors and 2
when input data cannot be read or parsed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .cart import ExactLeaves, MaxDepth
from .data import DataError, load_csv, split_dataset, synth_sine, write_csv
from .forest import (Bootstrap, ForestParams, FullSample, Subsample, fit_forest, load_forest,
                     predict_forest, save_forest)
from .netcompile import compile_forest, concat_networks, save_network
from .train import Method, Mode, TrainConfig, fit_nrf, load_nrf, predict_nrf, save_nrf

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load(args):
    ds, report = load_csv(args.data, args.target)
    if report.rows_dropped or report.columns_dropped:
        logging.info("dropped %d rows; dropped columns: %s", report.rows_dropped,
                     ", ".join(report.columns_dropped) or "none")
    if getattr(args, "emit_clean", None):
        write_csv(ds, args.emit_clean)
    return ds


def _forest_params(args) -> ForestParams:
    if args.resample == "subsample":
        resample = Subsample(args.subsample_size)
    else:
        resample = Bootstrap() if args.resample == "bootstrap" else FullSample()
    stop = ExactLeaves(args.exact_leaves) if args.exact_leaves else MaxDepth(args.max_depth)
    return ForestParams(args.n_trees, resample, args.mtry, stop, args.seed)


def cmd_run(args):
    config = harness.load_config(args.config, seed=args.seed, workers=args.workers)
    report = harness.run_experiment(config)
    if args.out:
        for kind, path in harness.write_outputs(report, args.out).items():
            logging.info("wrote %s %s", kind, path)
    sys.stdout.write(harness.report_markdown(report))


def cmd_synth(args):
    ds = synth_sine(args.n, args.d, args.sigma, args.seed)
    if args.out:
        write_csv(ds, args.out)
    else:
        write_csv(ds, sys.stdout)


def cmd_fit_forest(args):
    ds = _load(args)
    split = split_dataset(ds, args.split_seed)
    forest = fit_forest(ds, split.train, _forest_params(args), n_jobs=args.jobs)
    save_forest(forest, args.out)
    val = ds.features[split.val], ds.target[split.val]
    rmse = float(np.sqrt(np.mean((predict_forest(forest, val[0]) - val[1]) ** 2)))
    print(f"forest: {forest.n_trees} trees, validation RMSE {rmse:.6g}")


def cmd_compile(args):
    forest = load_forest(args.forest)
    nets = compile_forest(forest, args.gamma1, args.gamma2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.joint:
        save_network(concat_networks(nets), out / "big.npz")
    else:
        for m, net in enumerate(nets):
            save_network(net, out / f"tree_{m:03d}.npz")
    print(f"compiled {len(nets)} trees into {out}")


def cmd_train(args):
    ds = _load(args)
    split = split_dataset(ds, args.split_seed)
    forest = load_forest(args.forest)
    if forest.n_features != ds.d:
        raise DataError(f"forest expects {forest.n_features} features, data has {ds.d}")
    config = TrainConfig(args.epochs, args.batch_size, args.learning_rate, mode=Mode(args.mode),
                         seed=args.seed)
    model = fit_nrf(forest, ds, split, Method(args.method), args.gamma1, args.gamma2, config)
    save_nrf(model, args.out)
    note = " (fell back to the forest)" if model.fallback_to_rf else ""
    print(f"validation RMSE {model.val_rmse:.6g}, forest {model.rf_val_rmse:.6g}{note}")


def cmd_predict(args):
    ds = _load(args)
    path = Path(args.model)
    if (path / "model.json").exists():
        pred = predict_nrf(load_nrf(path), ds.features)
    elif (path / "forest.json").exists():
        pred = predict_forest(load_forest(path), ds.features)
    else:
        raise DataError(f"{path} holds neither a model nor a forest")
    lines = ["prediction"] + [repr(float(p)) for p in pred]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_report(args):
    report = harness.read_report_csv(args.input)
    text = harness.report_markdown(report) if args.format == "markdown" else harness.report_csv(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _add_data(p, emit_clean=True):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--target", help="target column (default: last column)")
    if emit_clean:
        p.add_argument("--emit-clean", metavar="PATH", help="write the cleaned data here")


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--gamma1", type=float, default=100.0)
    p.add_argument("--gamma2", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nrf", description="Random forests recast as trainable neural networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run a repeated experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--workers", type=int, help="run repeats in this many processes")
    p.add_argument("--out", help="directory for report.csv, report.md, curves.csv, timings.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write a synthetic sine-sum dataset as CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-forest", help="grow a forest on the training split")
    _add_data(p)
    p.add_argument("--out", required=True, help="forest directory")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-trees", type=int, default=30)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--exact-leaves", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--resample", choices=("bootstrap", "subsample", "full"), default="bootstrap")
    p.add_argument("--subsample-size", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_fit_forest)

    p = sub.add_parser("compile", help="translate a forest into network weight files")
    p.add_argument("--forest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--joint", action="store_true", help="write one concatenated network")
    p.add_argument("--gamma1", type=float, default=100.0)
    p.add_argument("--gamma2", type=float, default=1.0)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("train", help="train a neural forest initialised from a forest")
    _add_data(p)
    p.add_argument("--forest", required=True)
    p.add_argument("--method", choices=("1", "2"), required=True)
    p.add_argument("--mode", choices=("sparse", "full"), required=True)
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict with a saved model or forest")
    _add_data(p)
    p.add_argument("--model", required=True, help="model or forest directory")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="re-render a report CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DataError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"nrf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (harness.ConfigError, ValueError) as exc:
        print(f"nrf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
