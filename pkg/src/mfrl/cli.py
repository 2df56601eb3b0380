"""Command-line entry point: ``mfrl <subcommand> --config FILE``.

Exit codes: 0 success, 1 config validation error, 2 a check failed
(bounds, eluder bound, or non-converged NE), 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

from . import __version__
from .errors import ConfigError, MFRLError, SchemaVersionError
from .harness import (EXIT_CHECK, EXIT_INTERNAL, EXIT_OK, EXIT_VALIDATION, aggregate_curves,
                      emit_curves, load_config, run_experiment)

SUBCOMMANDS = {
    "run-mfc": "mfc",
    "run-mfg": "mfg",
    "eluder-dim": "eluder",
    "check-bounds": "bounds",
    "ne-solve": "ne",
    "gen-class": "gen_class",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfrl", description="Mean-field RL experiments.")
    ap.add_argument("--version", action="version", version=f"mfrl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, mode in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run a {mode} experiment")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, action="append",
                       help="replicate seed; repeatable, overrides the config's seeds")
        p.add_argument("--out", help="output directory (MFRL_OUT overrides)")
        p.add_argument("--jobs", type=int, help="parallel replicate workers")
    p = sub.add_parser("emit-curves", help="flatten trace CSVs into long-format curves")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", action="store_true", help="also print final-iteration mean and SE")
    return ap


def _run(args) -> int:
    if args.command == "emit-curves":
        n = emit_curves(args.traces, args.out)
        print(f"wrote {n} rows to {args.out}")
        if args.summary:
            print(json.dumps(aggregate_curves(args.out), indent=1, sort_keys=True))
        return EXIT_OK
    cfg = load_config(args.config, SUBCOMMANDS[args.command])
    if args.seed:
        if any(s < 0 for s in args.seed):
            raise ConfigError("--seed: seeds must be non-negative")
        cfg.seeds = list(args.seed)
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs: must be >= 1")
        cfg.jobs = args.jobs
    out = os.environ.get("MFRL_OUT") or args.out or cfg.out
    res = run_experiment(cfg, out)
    verdict = "PASS" if res.summary["passed"] else "FAIL"
    print(f"{args.command}: {verdict} ({len(cfg.seeds)} replicate(s)) -> {res.out}")
    for name, m in res.summary["metrics"].items():
        print(f"  {name}: mean={m['mean']:.6g} se={m['se']:.3g} n={m['n']}")
    return res.status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, SchemaVersionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except MFRLError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
