"""Command line entry point: ``smckit run | validate | list-experiments``.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from ..errors import ConfigError
from .config import EXPERIMENT_KINDS, load_config
from .csvio import write_csv
from .experiments import run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smckit", description="SMC experiments with an exact finite-state oracle")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment and write CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output CSV path (defaults to the config's output key)")
    run.add_argument("--seed", type=_u64, help="override the config seed")
    run.add_argument("--threads", type=_positive, default=1, help="worker processes for independent cells")
    val = sub.add_parser("validate", help="parse and validate a config")
    val.add_argument("--config", required=True)
    sub.add_parser("list-experiments", help="list experiment kinds")
    return p


def _load(path: str):
    try:
        return load_config(path)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"{path}: {d}", file=sys.stderr)
        return None
    except OSError as exc:
        print(f"{path}: {exc.strerror or exc}", file=sys.stderr)
        return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for name, desc in EXPERIMENT_KINDS.items():
            print(f"{name}\t{desc}")
        return EXIT_OK
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_INVALID
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.kind})")
        return EXIT_OK
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = args.out or cfg.output
    if not out:
        print("no output path: pass --out or set 'output' in the config", file=sys.stderr)
        return EXIT_INVALID
    try:
        rows = run_experiment(cfg, threads=args.threads)
        write_csv(rows, out)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"{cfg.kind} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
