"""Command-line front end.

One subcommand per public operation, plus `run` (experiment config file),
`accept` (the acceptance suite) and `report`.  Stochastic subcommands
require --seed.  Exit codes: 0 pass, 1 validation error, 2 numerical
failure, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import operations
from .errors import (
    AccuracyError,
    ConfigurationError,
    DomainError,
    ExtrapolationError,
    NumericalFailure,
    ResourceError,
)

DEFAULT_ROOT_ENV = "BBMLAB_OUT"


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(DEFAULT_ROOT_ENV, "runs"))


def _add_operation_parsers(sub):
    for name, op in operations.REGISTRY.items():
        p = sub.add_parser(name, help=op.anchor)
        for param in sorted(op.parameters):
            if param == "seed":
                continue
            p.add_argument(f"--{param.replace('_', '-')}", dest=param, default=None)
        # seed required for stochastic ops, but validated in main() so the
        # failure maps to exit code 1 rather than argparse's 2
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.set_defaults(_operation=name)


def _coerce(value: str):
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bbmlab",
                                     description="angle-inhomogeneous branching "
                                                 "diffusion laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_operation_parsers(sub)

    p_run = sub.add_parser("run", help="execute an experiment config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--force", action="store_true")

    p_acc = sub.add_parser("accept", help="run the acceptance suite")
    p_acc.add_argument("--only", default=None,
                       help="comma-separated criterion numbers")

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("run_dir")

    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            from .harness import run_experiment, spec_from_config

            spec = spec_from_config(Path(args.config).read_text())
            record = run_experiment(spec, root=args.out or None)
            print(f"{spec.name}: {record.status} ({len(record.digests)} files, "
                  f"spec {record.spec_hash})")
            return 0

        if args.command == "accept":
            from .acceptance import run_suite

            numbers = None
            if args.only:
                numbers = {int(v) for v in args.only.split(",")}
            results = run_suite(numbers)
            for res in results:
                print(res.line())
            n_fail = sum(1 for r in results if not r.passed)
            print(f"{len(results) - n_fail}/{len(results)} criteria passed")
            return 0 if n_fail == 0 else 3

        if args.command == "report":
            from .harness import report

            text, code = report(args.run_dir)
            print(text, end="")
            return code

        # a registry operation
        op = operations.REGISTRY[args._operation]
        params = {}
        for key in op.parameters:
            val = getattr(args, key, None)
            if val is not None:
                params[key] = _coerce(val) if isinstance(val, str) else val
        if op.stochastic and "seed" not in params:
            raise ConfigurationError(f"--seed is required for {op.name}")
        out = _out_root(args) / op.name
        out.mkdir(parents=True, exist_ok=True)
        files = op.run(params, out)
        for f in files:
            print(f)
        return 0

    except (ConfigurationError, DomainError, ExtrapolationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except (NumericalFailure, AccuracyError, ResourceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
