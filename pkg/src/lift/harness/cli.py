"""Command-line entry point: ``lift run|validate|spectral-study|mask-inspect``.

Exit codes: 0 success, 1 a failure inside a module, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..exceptions import ConfigError, LiftError
from .checkpoint import load_checkpoint
from .config import EXPERIMENT_KINDS, parse_config
from .run import format_table, mask_overlaps, run

log = logging.getLogger("lift")

STRATEGY_CHOICES = ("lift", "lift_structured", "weight_magnitude", "random")


def _load(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def _cmd_run(args) -> int:
    config = _load(args.config)
    outcome = run(config, args.output_dir)
    for path in outcome.files:
        print(path)
    return 0


def _cmd_spectral(args) -> int:
    config = _load(args.config).model_copy(update={"experiment": "spectral-study"})
    outcome = run(config, args.output_dir)
    print(format_table(outcome.summary["results"]["rows"]))
    return 0


def _cmd_validate(args) -> int:
    config = _load(args.config)
    print(f"ok: {config.experiment}, {len(config.methods)} methods, seed {config.seed}")
    return 0


def _cmd_mask_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    lora_rank = None if args.k is not None else args.lora_rank
    rows = mask_overlaps(ckpt, args.strategy, args.against, args.rank, args.k, lora_rank)
    print(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lift", description="Low-rank informed sparse fine-tuning toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help=f"run an experiment ({', '.join(EXPERIMENT_KINDS)})")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None, help="override the configured output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate", help="parse and validate a config without running it")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("spectral-study", help="run the random-matrix spectral study and print its table")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=_cmd_spectral)

    p = sub.add_parser("mask-inspect", help="mask overlaps on every matrix of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--strategy", choices=STRATEGY_CHOICES, default="lift")
    p.add_argument("--against", nargs="+", choices=STRATEGY_CHOICES, default=["weight_magnitude", "random"])
    p.add_argument("--k", type=int, default=None, help="exact number of selected entries")
    p.add_argument("--lora-rank", type=int, default=8, help="budget as rank*(rows+cols) when --k is absent")
    p.add_argument("--rank", type=int, default=None, help="low-rank approximation rank for lift")
    p.set_defaults(func=_cmd_mask_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lift: config error: {exc}", file=sys.stderr)
        return 2
    except (LiftError, ValueError, OSError) as exc:
        print(f"lift: error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
