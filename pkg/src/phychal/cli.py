"""Command-line entry point: ``phychal <kind> --config FILE --seed S --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import KINDS, ConfigError, defaults, build_spec, load_config, schema_table
from .experiments import run


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="phychal",
        description="Phase challenge-response authentication experiments over simulated OFDM.",
        epilog="Run 'phychal schema' to list every configuration key and its default.",
    )
    p.add_argument("kind", choices=KINDS + ("schema",), help="experiment to run")
    p.add_argument("--config", help="key = value configuration file (defaults if omitted)")
    p.add_argument("--seed", type=_u64, help="master seed, overrides [run] seed")
    p.add_argument("--out", help="output directory for CSV files and manifest.json")
    p.add_argument("--trials", type=_positive, help="Monte Carlo trials per hypothesis and sweep point")
    p.add_argument("--threads", type=_positive, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.kind == "schema":
        print(schema_table())
        return 0
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.out is None:
        print("phychal: error: --out is required", file=sys.stderr)
        return 2
    try:
        spec = load_config(args.config) if args.config else build_spec(defaults())
        spec = spec.with_overrides(kind=args.kind, seed=args.seed, trials=args.trials)
        written = run(spec, args.out, threads=args.threads)
    except ConfigError as exc:
        where = args.config or "<defaults>"
        print(f"phychal: config error in {where}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"phychal: {exc}", file=sys.stderr)
        return 1
    for path in written.values():
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
