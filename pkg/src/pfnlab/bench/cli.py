"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import PFNLabError
from .config import load_config
from .pipeline import COMMANDS

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

HELP = {
    "pretrain": "meta-train on the synthetic prior",
    "finetune": "finetune the pretrained model on every dataset at protocol.lr",
    "sweep": "finetune over the learning-rate grid and keep the best run",
    "scratch": "train the same architecture from random init on every dataset",
    "eval": "test metrics for in-context, saved checkpoints and the MLP baseline",
    "analyze": "attention-kNN report and entropy/error diagnostics",
    "subsample": "train-size study over nested halvings of one dataset",
    "report": "aggregate report rows into per-method summaries",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pfnlab", description="Desk-scale prior-fitted network laboratory.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output root")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.out)
        summary = COMMANDS[args.command](cfg)
    except (PFNLabError, OSError) as exc:
        print(f"pfnlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
