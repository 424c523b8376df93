"""Command-line entry point: one subcommand per pipeline stage plus ``full-run``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .classifier import TrainingConfig
from .config import load_config
from .errors import ConfigError, MissingArtifact, VlsDamageError
from .pipeline import STAGE_FUNCS, STAGES, Workspace, _datasets, full_run

logger = logging.getLogger("vlsdamage")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_FAILED = 4

# stages that run once per dataset when --dataset is not given
_PER_DATASET = {"simulate", "features", "change", "cluster"}


def _add_common(p: argparse.ArgumentParser, top: bool) -> None:
    # subcommands repeat the flags with suppressed defaults so they never
    # overwrite values given before the subcommand name
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--config", default=d(None), help="YAML config file (defaults apply when omitted)")
    p.add_argument("--jobs", type=int, default=d(1), help="worker processes (default 1)")
    p.add_argument("--seed-override", type=int, default=d(None), help="derive every named seed from this value")
    p.add_argument("--out-dir", default=d(None), help="artifact directory (overrides paths.out_dir)")
    p.add_argument("--print-config", action="store_true", default=d(False),
                   help="print the resolved config and exit")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlsdamage",
        description="Building damage grading from simulated multi-temporal laser scans.",
    )
    _add_common(parser, top=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        _add_common(p, top=False)
        if name in _PER_DATASET or name in ("classify", "evaluate"):
            p.add_argument("--dataset", choices=("train", "eval"), help="restrict to one dataset")
        else:
            p.set_defaults(dataset=None)
        if name == "train":
            p.add_argument("--training-config", choices=[t.value for t in TrainingConfig],
                           help="tag stored in the model (default from config)")
        else:
            p.set_defaults(training_config=None)
    return parser


def _resolve_config(args):
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.with_seed_override(args.seed_override)
    if args.out_dir:
        cfg = cfg.with_out_dir(args.out_dir)
    return cfg


def _run(args) -> None:
    cfg = _resolve_config(args)
    if args.print_config:
        sys.stdout.write(cfg.to_yaml())
        return
    if args.command is None:
        raise ConfigError("<command>", "no subcommand given")
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be >= 1")
    ws = Workspace(cfg)
    t = time.perf_counter()
    if args.command == "full-run":
        paths = full_run(cfg, ws, jobs=args.jobs)
        print(paths["json"])
    elif args.command == "train":
        STAGE_FUNCS["train"](cfg, ws, jobs=args.jobs, training_config=args.training_config)
        print(ws.model)
    elif args.command in _PER_DATASET:
        for ds in [args.dataset] if args.dataset else _datasets(cfg):
            STAGE_FUNCS[args.command](cfg, ws, ds, jobs=args.jobs)
    elif args.command in ("classify", "evaluate"):
        out = STAGE_FUNCS[args.command](cfg, ws, args.dataset, jobs=args.jobs)
        print(ws.predictions if args.command == "classify" else out["json"])
    else:
        STAGE_FUNCS[args.command](cfg, ws, jobs=args.jobs)
    logger.info("%s finished in %.1f s", args.command, time.perf_counter() - t)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except VlsDamageError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
