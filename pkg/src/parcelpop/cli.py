"""Command-line interface.

Subcommands map one-to-one onto pipeline stages plus `run` (all stages),
`emit-map` (symbology-ready GeoJSON), and `make-toy` (bundled synthetic
test city). Exit codes: 0 ok, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback

from .allocate import AllocationError
from .ca import CAError
from .config import ConfigError, load_config
from .features import FeatureError
from .geodata import LoadError
from .logit import FitError
from .metrics import MetricError
from .parcelize import ParcelizeError
from .pipeline import RunContext, StageError, StageInputError, emit_map, run_pipeline, run_stage
from .synthesize import SynthesisError
from . import toycity

INPUT_ERRORS = (ConfigError, LoadError, FitError, AllocationError, CAError,
                FeatureError, MetricError, ParcelizeError, SynthesisError,
                StageInputError, FileNotFoundError)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=False, help="pipeline config JSON")
    p.add_argument("--out-dir", default="out", help="stage output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--threads", type=int, default=None, help="override config threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parcelpop",
        description="Parcel delineation, urban selection, population "
                    "allocation and agent synthesis from open geodata.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, hlp in [
        ("parcelize", "delineate parcels from the road network"),
        ("features", "compute per-parcel descriptors"),
        ("calibrate", "fit (or load) the urban logistic model"),
        ("allocate", "select residential parcels and apportion population"),
        ("synthesize", "generate individual agents"),
        ("validate", "compute the validation metrics report"),
        ("run", "run every stage in order and write the manifest"),
    ]:
        p = sub.add_parser(name, help=hlp)
        _add_common(p)
        if name == "parcelize":
            p.add_argument("--dump-intermediates", action="store_true",
                           help="also write the processed line layers")

    p = sub.add_parser("ca", help="run the cellular automaton")
    p.add_argument("action", nargs="?", default="run", choices=["run"])
    _add_common(p)
    p.add_argument("--params", help="alias for --config")
    p.add_argument("--budget", type=float, default=None,
                   help="override the urban area budget (m^2)")

    p = sub.add_parser("emit-map", help="write symbology-ready GeoJSON for a stage")
    _add_common(p)
    p.add_argument("--stage", required=True,
                   help="one of: parcelize, features, ca, allocate")
    p.add_argument("--dest", required=True,
                   help="output file (directory for ca snapshots)")

    p = sub.add_parser("make-toy", help="generate the bundled synthetic test city")
    p.add_argument("--out-dir", default="toycity")
    p.add_argument("--seed", type=int, default=42)
    return parser


def _context(args) -> RunContext:
    cfg_path = getattr(args, "params", None) or args.config
    if not cfg_path:
        raise ConfigError("--config is required for this command")
    cfg = load_config(cfg_path)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return RunContext(
        cfg=cfg,
        out_dir=args.out_dir,
        threads=cfg.threads,
        dump_intermediates=getattr(args, "dump_intermediates", False),
    )


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-toy":
            toycity.generate(args.out_dir, seed=args.seed)
            print(f"toy city written to {args.out_dir}")
            return 0
        ctx = _context(args)
        if args.command == "run":
            manifest = run_pipeline(ctx)
            print(f"pipeline ok: {len(manifest['stages'])} stages, "
                  f"outputs in {ctx.out_dir}")
            return 0
        if args.command == "emit-map":
            written = emit_map(ctx, args.stage, args.dest)
            print(f"wrote {len(written)} file(s)")
            return 0
        if args.command == "ca":
            run_stage("ca", ctx, budget=args.budget)
        else:
            run_stage(args.command, ctx)
        print(f"stage '{args.command}' ok, outputs in {ctx.out_dir}")
        return 0
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc.cause, INPUT_ERRORS) else 2
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
