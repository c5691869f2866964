"""Command-line entry point: ``yellowrisk run | gen-climate | inspect``.

Exit status is 0 on success, 1 for invalid input and 2 when an internal
invariant is violated.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from .climate import SyntheticClimateParams, save_climate, synthesize_climate
from .config import load_config, parse_year_range
from .errors import InputError, InvariantError

log = logging.getLogger("yellowrisk")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="yellowrisk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate every configuration and write results and premiums")
    p.add_argument("--config", type=Path, help="INI file read on top of the bundled defaults")
    p.add_argument("--workers", type=_positive_int, help="worker processes (default from config)")
    p.add_argument("--out", type=Path, help="output directory (default from config)")

    p = sub.add_parser("gen-climate", help="write a seeded synthetic daily climate CSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--years", required=True, help="inclusive calendar years A:B")
    p.add_argument("--regions", type=_positive_int, required=True)
    p.add_argument("--warming", type=float, default=0.0, help="warming trend in degC per century after 2000")
    p.add_argument("--model", default="synthetic", help="model/institution label")
    p.add_argument("--scenario", default="synthetic", help="scenario label")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("inspect", help="per-day trace for one configuration, region and year")
    p.add_argument("--config", type=Path)
    p.add_argument("--id", dest="config_id", required=True, help="institution/scenario/virus/flightmodel/incidenceset")
    p.add_argument("--region", required=True)
    p.add_argument("--year", type=int, required=True)
    p.add_argument("--out", type=Path, help="trace CSV path (default: inside the output directory)")
    return parser


def _cmd_run(args: argparse.Namespace) -> None:
    from .runner import run

    overrides = {}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["output_dir"] = args.out
    cfg = load_config(args.config, **overrides)
    started = time.perf_counter()
    output = run(cfg)
    log.info("wrote %s in %.1f s", cfg.output_dir, time.perf_counter() - started)
    print(f"{len(output.keys)} configurations, {len(output.regions)} regions, "
          f"{len(output.years)} years -> {cfg.output_dir}")  # fmt: skip


def _cmd_gen_climate(args: argparse.Namespace) -> None:
    years = parse_year_range(args.years, "--years")
    climate = synthesize_climate(
        args.seed, years, args.regions, args.warming, SyntheticClimateParams(), args.model, args.scenario
    )
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_climate(climate, args.out)
    except OSError as exc:
        args.out.unlink(missing_ok=True)
        raise InputError(f"cannot write {args.out}: {exc}") from None


def _cmd_inspect(args: argparse.Namespace) -> None:
    from .runner import inspect

    cfg = load_config(args.config)
    info = inspect(cfg, args.config_id, args.region, args.year, args.out)
    print(json.dumps(info, indent=2))


COMMANDS = {"run": _cmd_run, "gen-climate": _cmd_gen_climate, "inspect": _cmd_inspect}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except InputError as exc:
        print(f"yellowrisk: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"yellowrisk: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"yellowrisk: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
