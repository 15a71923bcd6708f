"""Command-line driver.

    fedgen run <config.json>       one protocol over the configured seeds
    fedgen matrix <matrix.json>    cross-product of protocol/beta/prompt_kind/... cells
    fedgen mia <config.json>       member/non-member metric gaps per protocol
    fedgen retrieve <config.json>  cosine retrieval of synthetic samples

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiment
from .config import load_config, load_matrix
from .errors import ConfigError, FedGenError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedgen", description="Federated generative learning simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="JSON config file")
    common.add_argument("--out", help=f"output directory (default: config output.dir, ${experiment.OUT_ENV}, ./results)")
    common.add_argument("--seeds", type=_seed_list, help="comma-separated seeds overriding the config")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("run", "run one experiment config"),
        ("matrix", "run an experiment matrix"),
        ("mia", "membership-inference gap report"),
        ("retrieve", "replication retrieval of synthetic samples"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _with_seeds(config, seeds):
    if seeds:
        return config.model_copy(update={"seeds": seeds})
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "matrix":
            matrix = load_matrix(args.config)
            if args.seeds:
                matrix = matrix.model_copy(update={"seeds": args.seeds})
            path, failed = experiment.run_matrix(matrix, args.out, args.jobs)
            print(path)
            if failed:
                print(f"{failed} matrix cell(s) failed; see the status column", file=sys.stderr)
                return EXIT_RUNTIME
            return EXIT_OK
        config = _with_seeds(load_config(args.config), args.seeds)
        runner = {"run": experiment.run_experiment, "mia": experiment.run_mia, "retrieve": experiment.run_retrieve}
        for path in runner[args.command](config, args.out, args.jobs):
            print(path)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FedGenError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
