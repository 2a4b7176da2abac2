"""Command-line experiment runner.

Subcommands: attack, transfer, defense-sweep, semantics-test, plot, train-zoo.
Every config is validated fully before any expensive work starts; all
randomness flows from the config seed, so re-runs are reproducible.
"""

from __future__ import annotations

import argparse
import sys
import traceback

from . import runner
from .errors import DemiguiseError


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config file (YAML)")
    parser.add_argument("--output", help="override the config's output directory")
    parser.add_argument("--seed", type=int, help="override the config's seed")
    parser.add_argument("--workers", type=int, help="override the worker count")


def _overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    if args.output is not None:
        overrides["output_dir"] = args.output
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demiguise",
        description="Perceptual-similarity adversarial attack experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (
        ("attack", "craft adversarial examples against one model"),
        ("transfer", "attack several models and evaluate the transfer matrix"),
        ("defense-sweep", "evaluate fooling rates under defense parameter sweeps"),
        ("semantics-test", "classify rescaled perturbations alone and compare rates"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_config_flags(p)

    p_plot = sub.add_parser("plot", help="re-render figures from a persisted report")
    p_plot.add_argument("--report", required=True, help="report JSON path")
    p_plot.add_argument("--kind", required=True, choices=("bars", "sweep_lines", "image_grid"))
    p_plot.add_argument("--output", help="directory for the figure (default: alongside report)")

    p_zoo = sub.add_parser("train-zoo", help="train the desk model zoo from scratch")
    p_zoo.add_argument("--output", required=True, help="directory for weights + manifest")
    p_zoo.add_argument("--seed", type=int, default=7)
    p_zoo.add_argument("--epochs", type=int, default=6)
    p_zoo.add_argument("--train-size", type=int, default=6000)
    p_zoo.add_argument("--test-size", type=int, default=1000)

    p_data = sub.add_parser("make-data", help="materialize a desk dataset directory")
    p_data.add_argument("--output", required=True, help="dataset directory to create")
    p_data.add_argument("--count", type=int, default=200)
    p_data.add_argument("--seed", type=int, default=0)
    return parser


_RUNNERS = {
    "attack": runner.run_attack_experiment,
    "transfer": runner.run_transfer_experiment,
    "defense-sweep": runner.run_defense_sweep,
    "semantics-test": runner.run_semantics_test,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in _RUNNERS:
            config = runner.ExperimentConfig.from_file(args.config, _overrides(args))
            report_path = _RUNNERS[args.command](config)
            print(f"report written: {report_path}")
        elif args.command == "plot":
            from . import plotting

            out = plotting.plot(args.report, args.kind, args.output)
            print(f"figure written: {out}")
        elif args.command == "train-zoo":
            from .classifiers import train_desk_zoo

            manifest = train_desk_zoo(
                args.output,
                seed=args.seed,
                epochs=args.epochs,
                train_size=args.train_size,
                test_size=args.test_size,
            )
            print(f"zoo manifest written: {manifest}")
        elif args.command == "make-data":
            from . import dataset

            directory = dataset.materialize(args.output, args.count, args.seed)
            print(f"dataset written: {directory} ({args.count} images)")
    except DemiguiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
