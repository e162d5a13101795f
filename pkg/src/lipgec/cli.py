"""Command-line entry point.

Subcommands cover the full chain (simulate, decode, build, pretrain-lm,
train, eval, report) plus selftest. Exit codes: 0 ok, 1 usage, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import PipelineConfig
from .errors import DataError, NumericError, UsageError

STAGES = ("simulate", "decode", "build", "pretrain-lm", "train", "eval", "report", "selftest")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lipgec", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def common(p):
        p.add_argument("--config", help="INI config file (defaults apply if omitted)")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable)",
        )
        p.add_argument("--out", help="shortcut for pipeline.out_dir")
        p.add_argument("--seed", type=int, help="shortcut for pipeline.seed")
        p.add_argument("--force", action="store_true", help="ignore config-hash mismatches")

    for name in ("simulate", "decode", "build", "pretrain-lm", "train", "eval", "report", "run"):
        p = sub.add_parser(name, help=f"{name} stage" if name != "run" else "run the full chain")
        common(p)
        if name == "decode":
            p.add_argument("--beam-width", type=int, help="shortcut for decode.beam_width")
            p.add_argument("--nbest", type=int, help="shortcut for decode.nbest")
        if name == "build":
            p.add_argument("--nbest", type=int, help="shortcut for corpus.nbest")
            p.add_argument("--split-ratio", type=float, help="shortcut for corpus.split_ratio")
        if name == "eval":
            p.add_argument("--systems", help="comma list: onebest,lm,ger,lipger")

    sub.add_parser("selftest", help="run the oracle suites")
    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"pipeline.out_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"pipeline.seed={args.seed}")
    if getattr(args, "beam_width", None) is not None:
        overrides.append(f"decode.beam_width={args.beam_width}")
    if getattr(args, "nbest", None) is not None:
        section = "decode" if args.command == "decode" else "corpus"
        overrides.append(f"{section}.nbest={args.nbest}")
    if getattr(args, "split_ratio", None) is not None:
        overrides.append(f"corpus.split_ratio={args.split_ratio}")
    return PipelineConfig.load(args.config, overrides)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        if args.command == "selftest":
            from .selftest import run_selftest

            return 0 if run_selftest() else 3

        cfg = _config_from_args(args)
        from . import pipeline

        if args.command == "simulate":
            pipeline.stage_simulate(cfg, args.force)
        elif args.command == "decode":
            pipeline.stage_decode(cfg, args.force)
        elif args.command == "build":
            pipeline.stage_build(cfg, args.force)
        elif args.command == "pretrain-lm":
            pipeline.stage_pretrain(cfg, args.force)
        elif args.command == "train":
            pipeline.stage_train(cfg, args.force)
        elif args.command == "eval":
            systems = args.systems.split(",") if args.systems else None
            pipeline.stage_eval(cfg, systems=systems, force=args.force)
        elif args.command == "report":
            pipeline.stage_report(cfg)
        elif args.command == "run":
            pipeline.run_full_chain(cfg, args.force)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
