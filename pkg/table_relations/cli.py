# Copyright (C) DATADVANCE, 2010-2023
#
# Permission is hereby granted, free of charge, to any person obtaining
# a copy of this software and associated documentation files (the
# "Software"), to deal in the Software without restriction, including
# without limitation the rights to use, copy, modify, merge, publish,
# distribute, sublicense, and/or sell copies of the Software, and to
# permit persons to whom the Software is furnished to do so, subject to
# the following conditions:
#
# The above copyright notice and this permission notice shall be
# included in all copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND,
# EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF
# MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT.
# IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY
# CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT,
# TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE
# SOFTWARE OR THE USE OR OTHER DEALINGS IN THE SOFTWARE.

"""Command-line interface of the table relation pipeline.

    table-relations synth --count 100 --out data/
    table-relations pairs --dataset data/
    table-relations train --dataset data/ --out run/
    table-relations eval --dataset data/ --checkpoint run/model.ckpt
    table-relations infer --table t.json --checkpoint run/model.ckpt
    table-relations recover --table t.json --oracle --query 3
    table-relations render --table t.json --out overlay.png
    table-relations experiment ablation --dataset data/ --out exp/

Common flags (`--seed`, `--k`, `--variant`, `--bbox-mode`, `--jobs`,
`--config`, `-v`, `-q`) are accepted by every command and win over the
config file. Failures print one diagnostic line and exit with a
nonzero code specific to the kind of failure.
"""

import argparse
import dataclasses
import json
import logging
import pathlib
import sys
from typing import Any, Dict, Optional, Sequence

from . import experiments, imaging, recovery, synthgen
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, write_run_config
from .dataset import SPLITS, build_pair_sets, load_split, prepare_table
from .error import ConfigError, TableRelationsError
from .model import ModelConfig, Variant
from .pairing import generate_pairs, pair_statistics
from .table import BBoxMode, load_table
from .training import (
    ModelPredictor,
    OraclePredictor,
    TrainConfig,
    evaluate_tables,
    predict_relations,
    train,
    write_history,
)

# Module logger.
LOG = logging.getLogger(__name__)

LOG_FORMAT = (
    "[%(levelname)s] [%(asctime)s,%(msecs)s] [%(thread)d %(threadName)s]"
    " - %(message)s"
)
LOG_DATE_FORMAT = "%Y-%m-%dT%H:%M:%S"
CHECKPOINT_NAME = "model.ckpt"
HISTORY_NAME = "history.csv"
CACHE_DIR = "cache"


def main() -> None:
    """Console script entry point."""
    sys.exit(run(sys.argv[1:]))


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one command.

    Returns:
        Exit code: 0 on success, the `exit_code` of the failure
        otherwise, 1 for file system errors, 2 for unusable arguments.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return int(ex.code or 0)
    _setup_logging(args.verbose - args.quiet)
    try:
        config = _run_config(args)
        LOG.debug("Effective configuration: %s.", config.to_dict())
        args.handler(args, config)
    except TableRelationsError as ex:
        LOG.debug("Command %s failed.", args.command, exc_info=True)
        print(f"error: {ex}", file=sys.stderr)
        return ex.exit_code
    except OSError as ex:
        LOG.debug("Command %s failed.", args.command, exc_info=True)
        print(f"error: {ex}!", file=sys.stderr)
        return TableRelationsError.exit_code
    return 0


def build_parser() -> argparse.ArgumentParser:
    """Parser of all commands."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--k", type=int, help="nearest neighbors per cell")
    common.add_argument("--variant", choices=[v.value for v in Variant])
    common.add_argument("--bbox-mode", choices=[m.value for m in BBoxMode])
    common.add_argument("--jobs", type=int, help="worker threads")
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="table-relations", description="Table structure from cell relations."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help_text):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.set_defaults(handler=handler)
        return sub

    sub = command("synth", _synth, "generate a synthetic dataset")
    sub.add_argument("--count", type=int, default=100)
    sub.add_argument("--profile", choices=sorted(synthgen.PROFILES))
    sub.add_argument("--out", required=True, help="dataset directory")

    sub = command("pairs", _pairs, "cache candidate pairs and print label counts")
    sub.add_argument("--dataset", help="dataset directory")
    sub.add_argument("--out", help="statistics JSON file")

    sub = command("train", _train, "train a model")
    sub.add_argument("--dataset", help="dataset directory")
    sub.add_argument("--out", required=True, help="run directory")

    sub = command("eval", _eval, "score a model on a split")
    sub.add_argument("--dataset", help="dataset directory")
    sub.add_argument("--split", choices=SPLITS, default="test")
    _add_predictor(sub)
    sub.add_argument("--out", help="metrics JSON file")

    sub = command("infer", _infer, "predict the relations of one table")
    sub.add_argument("--table", required=True, help="annotation JSON")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--out", help="relations JSON file")

    sub = command("recover", _recover, "recover rows and columns of one table")
    sub.add_argument("--table", required=True, help="annotation JSON")
    _add_predictor(sub)
    sub.add_argument("--query", type=int, help="also report the row and column")
    sub.add_argument("--out", help="structure JSON file")

    sub = command("render", _render, "draw cells and relations over the image")
    sub.add_argument("--table", required=True, help="annotation JSON")
    sub.add_argument("--checkpoint", help="draw predictions instead of the truth")
    sub.add_argument("--out", required=True, help="PNG file")

    sub = command("experiment", _experiment, "run a comparison protocol")
    sub.add_argument(
        "protocol", choices=("ablation", "bbox", "train-size", "domain-shift")
    )
    sub.add_argument("--dataset", help="dataset directory")
    sub.add_argument("--target", help="dataset of another style (domain-shift)")
    sub.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sub.add_argument("--sizes", type=int, nargs="+", default=[10, 30, 60])
    sub.add_argument("--out", help="results JSON file")
    return parser


# ------------------------------------------------------------------------ COMMANDS


def _synth(args, config: RunConfig) -> None:
    params = config.synth
    if args.profile is not None:
        params = dataclasses.replace(params, profile=args.profile)
    config = dataclasses.replace(config, synth=params)
    synthgen.write_dataset(params, args.count, args.out, config.jobs)
    write_run_config(config, args.out)


def _pairs(args, config: RunConfig) -> None:
    root = _dataset(config)
    train_config = config.train
    totals: Dict[str, Any] = {}
    for split in SPLITS:
        samples = load_split(root, split, config.jobs)
        counts: Dict[str, int] = {}
        for table, _ in samples:
            table = prepare_table(table, train_config.bbox_mode)
            stats = pair_statistics(table, generate_pairs(table, train_config.k))
            for name, value in stats.items():
                counts[name] = counts.get(name, 0) + value
        totals[split] = counts
        build_pair_sets(
            samples,
            train_config.k,
            train_config.bbox_mode,
            train_config.model.input_size,
            config.jobs,
            root / CACHE_DIR,
        )
    _emit(totals, args.out)


def _train(args, config: RunConfig) -> None:
    root = _dataset(config)
    out = pathlib.Path(args.out)
    train_samples = load_split(root, "train", config.jobs)
    val_samples = load_split(root, "val", config.jobs)
    result = train(
        train_samples, val_samples, config.train, config.jobs, root / CACHE_DIR
    )
    save_checkpoint(
        result.model,
        out / CHECKPOINT_NAME,
        result.optimizer,
        config.train.to_dict(),
    )
    write_history(result.history, out / HISTORY_NAME)
    write_run_config(config, out)
    LOG.info("Best epoch %s, run written to %s.", result.best_epoch, out)


def _eval(args, config: RunConfig) -> None:
    root = _dataset(config)
    predictor, train_config = _predictor(args, config)
    samples = load_split(root, args.split, config.jobs)
    report = evaluate_tables(
        predictor, samples, train_config, config.jobs, root / CACHE_DIR
    )
    print(report.format_table())
    if args.out is not None:
        pathlib.Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        pathlib.Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")


def _infer(args, config: RunConfig) -> None:
    predictor, train_config = _predictor(args, config)
    table = load_table(args.table)
    image = imaging.load_image(table.image_path)
    prediction = predict_relations(predictor, table, image, train_config)
    _emit(prediction.to_dict(), args.out)


def _recover(args, config: RunConfig) -> None:
    predictor, train_config = _predictor(args, config)
    table = load_table(args.table)
    image = imaging.load_image(table.image_path)
    relations = predict_relations(predictor, table, image, train_config).relations
    table = prepare_table(table, train_config.bbox_mode)
    graph = recovery.RelationGraph.from_table(table, relations)
    result: Dict[str, Any] = recovery.recover_structure(graph).to_dict()
    if args.query is not None:
        row, column = recovery.query_cell(graph, args.query)
        result["query"] = {"cell": args.query, "row": row, "column": column}
    _emit(result, args.out)


def _render(args, config: RunConfig) -> None:
    table = load_table(args.table)
    image = imaging.load_image(table.image_path)
    relations = None
    train_config = config.train
    if args.checkpoint is not None:
        predictor, train_config = _predictor(args, config)
        relations = predict_relations(predictor, table, image, train_config).relations
    table = prepare_table(table, train_config.bbox_mode)
    imaging.save_rgb(imaging.render_overlay(image, table, relations), args.out)


def _experiment(args, config: RunConfig) -> None:
    root = _dataset(config)
    data = experiments.ExperimentData.load(root, config.jobs)
    cache_dir = root / CACHE_DIR
    common = dict(config=config.train, jobs=config.jobs, cache_dir=cache_dir)
    result: Dict[str, Any]
    if args.protocol == "ablation":
        result = experiments.run_ablation(data, seeds=args.seeds, **common)
    elif args.protocol == "bbox":
        result = experiments.run_bbox_regimes(data, seeds=args.seeds, **common)
    elif args.protocol == "train-size":
        reports = experiments.run_training_size_sweep(data, sizes=args.sizes, **common)
        result = {str(size): report.to_dict() for size, report in reports.items()}
    else:
        if args.target is None:
            raise ConfigError("Protocol domain-shift needs --target")
        target = experiments.ExperimentData.load(args.target, config.jobs)
        reports = experiments.run_domain_shift(
            data,
            target,
            target_cache_dir=pathlib.Path(args.target) / CACHE_DIR,
            **common,
        )
        result = {name: report.to_dict() for name, report in reports.items()}
    _emit({"protocol": args.protocol, "results": result}, args.out)
    if args.out is not None:
        write_run_config(config, pathlib.Path(args.out).parent)


# ------------------------------------------------------------------ IMPLEMENTATION


def _setup_logging(verbosity: int) -> None:
    """Configure the root logger with the project log format."""
    level = logging.DEBUG if verbosity > 0 else logging.INFO
    if verbosity < 0:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format=LOG_FORMAT, datefmt=LOG_DATE_FORMAT, force=True
    )


def _run_config(args) -> RunConfig:
    """Config file overlaid by the command-line flags."""
    config = RunConfig() if args.config is None else load_config(args.config)
    return config.override(
        command=args.command,
        seed=args.seed,
        jobs=args.jobs,
        dataset=getattr(args, "dataset", None),
        verbosity=args.verbose - args.quiet,
        k=args.k,
        variant=args.variant,
        bbox_mode=args.bbox_mode,
        epochs=args.epochs,
    )


def _dataset(config: RunConfig) -> pathlib.Path:
    """Dataset directory of the run.

    Raises:
        ConfigError: No dataset given or it does not exist.
    """
    if config.dataset is None:
        raise ConfigError("No dataset: pass --dataset or set it in [run]")
    root = pathlib.Path(config.dataset)
    if not root.is_dir():
        raise ConfigError(f"Dataset directory {root} does not exist")
    return root


def _add_predictor(parser: argparse.ArgumentParser) -> None:
    """Add the mutually exclusive `--checkpoint` and `--oracle` flags."""
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", help="trained model")
    group.add_argument(
        "--oracle", action="store_true", help="predict the ground truth"
    )


def _predictor(args, config: RunConfig):
    """The predictor of the command and the training config it needs.

    A checkpoint brings its own training config, the explicit `--k`
    and `--bbox-mode` flags still win.
    """
    if getattr(args, "oracle", False):
        return OraclePredictor(), config.train
    expected = None if args.variant is None else ModelConfig(variant=args.variant)
    checkpoint = load_checkpoint(args.checkpoint, expected)
    train_config = config.train
    if checkpoint.train_config is not None:
        train_config = TrainConfig.from_dict(checkpoint.train_config)
    flags = {
        name: value
        for name, value in (("k", args.k), ("bbox_mode", args.bbox_mode))
        if value is not None
    }
    train_config = dataclasses.replace(
        train_config, model=checkpoint.model.config, **flags
    )
    return ModelPredictor(checkpoint.model), train_config


def _emit(data: Any, out: Optional[str]) -> None:
    """Print JSON or write it to a file."""
    text = json.dumps(data, indent=1)
    if out is None:
        print(text)
        return
    path = pathlib.Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")
    LOG.info("Wrote %s.", path)

