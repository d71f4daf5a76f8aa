"""Command-line entry point for the benchmark harness.

Subcommands: run, score-error, acceptance, validate. Exit codes: 0 on
success, 2 on configuration errors, 3 when every sweep cell failed.
"""

from __future__ import annotations

import argparse
import sys

import yaml

from .bench import (
    ExperimentConfig,
    load_config,
    run_acceptance_study,
    run_experiment,
    run_score_error_study,
    validate_config,
)
from .errors import ConfigurationError, UnsupportedTargetError


def _add_common(sub):
    sub.add_argument("config", help="experiment config file (YAML)")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--workers", type=int, default=None, help="parallel sweep cells")
    sub.add_argument("--out", default=None, help="override the output directory")


def _load(args) -> tuple:
    with open(args.config) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must contain a mapping")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.out is not None:
        raw["output_dir"] = args.out
    return ExperimentConfig.from_dict(raw), raw


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="zodmc", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "score-error", "acceptance", "validate"):
        _add_common(subs.add_parser(name))
    args = parser.parse_args(argv)

    if args.command == "validate":
        problems = validate_config(args.config)
        if problems:
            for p in problems:
                print(f"invalid: {p}", file=sys.stderr)
            return 2
        print("config ok")
        return 0

    try:
        cfg, raw = _load(args)
        if args.command == "run":
            code = run_experiment(cfg, raw_cfg=raw)
        elif args.command == "score-error":
            code = run_score_error_study(cfg)
        else:
            code = run_acceptance_study(cfg)
    except (ConfigurationError, UnsupportedTargetError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if code == 0:
        print(f"wrote results under {cfg.output_dir}/{cfg.name}")
    else:
        print("all cells failed; see manifest errors", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
