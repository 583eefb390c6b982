"""Worker entry point.

Invocation: segcurate-worker --role generator --backend procedural
--workdir <dir> (or python -m segworker ...). The process then speaks
protocol v1 on stdin/stdout until quit or EOF.
"""
from __future__ import annotations

import argparse
import sys

from .server import ROLES, WorkerConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segcurate-worker", description=__doc__)
    parser.add_argument("--role", required=True, choices=ROLES)
    parser.add_argument("--backend", default="procedural", choices=("procedural", "adapter"))
    parser.add_argument("--workdir", default=".", help="shared file-exchange directory")
    parser.add_argument("--seed", type=int, default=0, help="labeller noise seed")
    parser.add_argument("--corruption", type=float, default=0.0,
                        help="per-component class-swap probability")
    parser.add_argument("--corrupt-index", type=int, default=None,
                        help="force full corruption for this candidate index")
    parser.add_argument("--noise", type=float, default=0.0, help="labeller pixel noise rate")
    parser.add_argument("--jitter", type=int, default=8, help="image jitter amplitude")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = WorkerConfig(
            role=args.role,
            backend=args.backend,
            workdir=args.workdir,
            seed=args.seed,
            corruption=args.corruption,
            corrupt_index=args.corrupt_index,
            noise=args.noise,
            jitter=args.jitter,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return serve(config)


if __name__ == "__main__":
    sys.exit(main())
