"""Command-line harness.

Subcommands:
  simulate   single-trajectory dump (replica 0, first epsilon)
  average    tabulate the averaged particle/field drifts
  converge   convergence study (--model 1 or 2)
  check      diagnostic check suite
  validate   config lint only

Exit codes: 0 PASS, 1 FAIL, 2 INCONCLUSIVE, 64 config error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import ConfigError
from .harness import (
    ExperimentConfig,
    emit_outputs,
    load_config,
    run_check_suite,
    run_model1_convergence,
    run_model2_convergence,
    simulate_single,
    tabulate_averages,
)

EXIT_CONFIG_ERROR = 64


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="TOML or JSON config (or manifest)")
    parser.add_argument("--seed", type=int, default=None, help="override master seed")
    parser.add_argument("--threads", type=int, default=1, help="worker process count")
    parser.add_argument("--out", default=None, help="output directory (default: config out_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slowfast",
        description="Slow-fast coupled system simulation and averaging studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "dump a single trajectory"),
        ("average", "tabulate averaged drifts"),
        ("converge", "run a convergence study"),
        ("check", "run the check suite"),
        ("validate", "lint the config and exit"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "converge":
            p.add_argument("--model", type=int, choices=(1, 2), required=True)
        if name == "check":
            p.add_argument(
                "--checks",
                default=None,
                help="comma-separated subset (default: all applicable)",
            )
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.out is None:
        args.out = config.out_dir
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
        if args.command == "validate":
            config.validate()
            print("config OK")
            return 0
        if args.command == "simulate":
            csv_text = simulate_single(config)
            emit_outputs({}, args.out, config, extra_files={"trajectory": csv_text})
            print(f"wrote trajectory.csv and manifest.json to {args.out}")
            return 0
        if args.command == "average":
            tables = tabulate_averages(config)
            emit_outputs({}, args.out, config, extra_files=tables)
            print(f"wrote {', '.join(sorted(n + '.csv' for n in tables))} to {args.out}")
            return 0
        if args.command == "converge":
            if args.model != config.model:
                raise ConfigError(
                    f"--model {args.model} does not match config model {config.model}"
                )
            runner = run_model1_convergence if args.model == 1 else run_model2_convergence
            tables, verdict = runner(config, threads=args.threads)
            emit_outputs(tables, args.out, config)
            for reason in verdict.reasons:
                print(reason)
            print(f"verdict: {verdict.status}")
            return verdict.exit_code
        if args.command == "check":
            checks = None
            if args.checks is not None:
                checks = [c.strip() for c in args.checks.split(",") if c.strip()]
            report = run_check_suite(config, checks, threads=args.threads)
            for line in report.lines():
                print(line)
            return report.exit_code
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
