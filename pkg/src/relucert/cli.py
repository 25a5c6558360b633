"""Command-line entry point (populated incrementally; see README)."""
from __future__ import annotations

import argparse
import sys


def _cmd_backend_solve(args) -> int:
    """Solve an LP-format model file; used as the reference external backend."""
    from . import milp

    model = milp.read_lp(args.model)
    result = milp.solve_milp(model, milp.MilpOptions())
    milp.write_solution(result, model, args.solution)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relucert",
        description="Certify ReLU approximations of linear MPC controllers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backend-solve",
                       help="solve an LP-format file (external-backend contract)")
    p.add_argument("model")
    p.add_argument("solution")
    p.set_defaults(func=_cmd_backend_solve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
