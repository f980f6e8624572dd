"""Command-line experiment runner.

Subcommands: `truth` synthesises the twin observations, `run` executes a
reanalysis chain, `forecast` adds forecast fans at chosen cycles, and
`metrics` recomputes all scores from stored artifacts.

Exit codes: 0 success, 2 configuration error, 3 model/runtime error,
4 missing inputs.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, ExperimentConfig
from .solver import SolverError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_MISSING = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment JSON file")
    parser.add_argument("--mode", choices=("OL", "IDA", "IGDA"))
    parser.add_argument("--forcing", choices=("V", "C"), dest="forcing_source")
    parser.add_argument("--strategy", choices=("CC", "VC", "VQ", "none"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", dest="output_dir")
    parser.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="floodda",
        description="Twin-experiment flood reanalysis and forecasting testbed",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_truth = sub.add_parser("truth", help="truth run + synthetic observations")
    _add_common(p_truth)

    p_run = sub.add_parser("run", help="cycled reanalysis in the configured mode")
    _add_common(p_run)

    p_fc = sub.add_parser("forecast", help="reanalysis chain with forecast fans")
    _add_common(p_fc)
    p_fc.add_argument("--issue-cycles", type=int, nargs="+",
                      help="cycle indices that issue forecasts")

    p_met = sub.add_parser("metrics", help="recompute scores from run artifacts")
    p_met.add_argument("run_dirs", nargs="+", help="finished run directories")
    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config)
    overrides = {}
    for key in ("mode", "forcing_source", "strategy", "seed", "output_dir", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        config = config.with_overrides(**overrides)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "metrics":
            from .experiment import run_metrics

            paths = run_metrics(args.run_dirs)
            for p in paths:
                print(p)
            return EXIT_OK

        config = _load_config(args)
        if args.command == "truth":
            from .experiment import run_truth

            print(run_truth(config))
        elif args.command == "run":
            from .experiment import run_reanalysis

            print(run_reanalysis(config))
        elif args.command == "forecast":
            from .experiment import run_forecast

            print(run_forecast(config, issue_cycles=args.issue_cycles))
        return EXIT_OK
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"missing input: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (SolverError, RuntimeError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
