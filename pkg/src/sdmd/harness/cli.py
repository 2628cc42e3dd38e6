"""``sdmd-lab`` command-line entry point.

Exit codes: 0 success, 2 invariant-suite failure, 3 numerical failure,
4 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from ..errors import (
    ConfigError,
    DomainError,
    InvalidArgumentError,
    InvariantFailure,
    SDMDError,
    UnsupportedFamilyError,
)
from .config import COMMANDS, load_config
from .experiments import run

THREADS_ENV = "SDMD_LAB_THREADS"

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("thread count must be >= 1")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="sdmd-lab", description="Stochastic dynamic mode decomposition experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=_u64, help="base seed (overrides the config)")
    p.add_argument("--threads", type=_positive, help=f"worker threads (default: ${THREADS_ENV} or the config)")
    return p


def _default_threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if v < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return v


def _fail(code, kind, exc):
    where = getattr(exc, "stage", None)
    prefix = f"sdmd-lab: {kind}" + (f" in stage '{where}'" if where else "")
    print(f"{prefix}: {exc}", file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = args.threads if args.threads is not None else _default_threads()
        overrides = {"output": args.out, "seed": args.seed, "threads": threads}
        cfg = load_config(args.config, args.command, overrides)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config error", exc)
    try:
        report = run(args.command, cfg)
    except InvariantFailure as exc:
        return _fail(EXIT_INVARIANT, "invariant failure", exc)
    except (ConfigError, InvalidArgumentError, DomainError, UnsupportedFamilyError) as exc:
        return _fail(EXIT_CONFIG, "config error", exc)
    except (SDMDError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical failure", exc)
    except OSError as exc:
        return _fail(EXIT_CONFIG, "I/O error", exc)
    print(f"sdmd-lab {args.command}: {cfg['experiment']} -> {cfg['output']} ({report['wall_clock_s']:.1f} s)")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
