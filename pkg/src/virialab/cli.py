"""Command line entry point: run / validate / version.

Seed precedence, highest first: --seed flag, config file, VIRIALAB_SEED
environment variable, 0.
"""

import argparse
import json
import os
import sys

from . import __version__
from .errors import (
    BlowUpError,
    ConfigurationError,
    DivergentIntegralError,
    InstabilityError,
    InsufficientDataError,
)
from .experiments import load_config, run_experiment

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_DIVERGENCE = 4
EXIT_INSUFFICIENT_DATA = 5
EXIT_IO = 6


def _env_seed():
    raw = os.environ.get("VIRIALAB_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"VIRIALAB_SEED must be an integer, got {raw!r}") from None


def resolve_seed(cli_seed, config_seed_present, config_seed):
    if cli_seed is not None:
        return int(cli_seed)
    if config_seed_present:
        return int(config_seed)
    env = _env_seed()
    return env if env is not None else 0


def _build_parser():
    parser = argparse.ArgumentParser(prog="virialab",
                                     description="pressure-law experiments for "
                                                 "interacting Brownian particles")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("config", help="path to a JSON experiment config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--threads", type=int, default=0,
                     help="force-loop threads; 0 = deterministic single-threaded")
    run.add_argument("--out", default="out", help="output directory")

    val = sub.add_parser("validate", help="parse and validate a config, print the resolved form")
    val.add_argument("config", help="path to a JSON experiment config")

    sub.add_parser("version", help="print the package version")
    return parser


def _load_with_seed(path, cli_seed):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    seed = resolve_seed(cli_seed, "seed" in raw, raw.get("seed", 0))
    raw["seed"] = seed
    return load_config(raw)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "version":
            print(__version__)
            return EXIT_OK
        if args.command == "validate":
            config = _load_with_seed(args.config, None)
            print(json.dumps(config.to_json_dict(), indent=2))
            return EXIT_OK
        if args.command == "run":
            config = _load_with_seed(args.config, args.seed)
            report = run_experiment(config, args.out, threads=args.threads)
            missing = [
                p for p in report["artifacts"].values()
                if not (os.path.exists(p) and os.path.getsize(p) > 0)
            ]
            if missing:
                print(f"error: empty or missing artifacts {missing}", file=sys.stderr)
                return EXIT_IO
            print(json.dumps({k: v for k, v in report.items() if k != "artifacts"}, indent=2))
            return EXIT_OK
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except DivergentIntegralError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT_DATA
    except InstabilityError as exc:
        print(f"instability: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
