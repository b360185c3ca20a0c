"""Command-line front end.

Exit status: 0 completable, 1 not completable, 2 inconclusive, 64 usage
error, 65 malformed matrix file, 66 unreadable input.
"""
from __future__ import annotations

import argparse
import datetime
import logging
import sys

from .driver import DriverSettings, fast_path_dispatch
from .fileio import MatrixParseError, dumps, parse_matrix, render_text, result_document
from .partial import perturb_given_diagonals
from .sdp import SolverSettings

EXIT_CODES = {"completable": 0, "not_completable": 1, "inconclusive": 2}
EX_USAGE, EX_DATAERR, EX_NOINPUT = 64, 65, 66


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpcomplete",
                description="Decide whether a partial symmetric matrix has a completely positive completion.")
    p.add_argument("input", help="matrix file ('-' reads standard input)")
    p.add_argument("--d", type=int, default=4, help="degree of the random objective (even, > 2; default 4)")
    p.add_argument("--kmax", type=int, default=6, help="highest relaxation order (default 6)")
    p.add_argument("--seed", type=int, default=0, help="seed for the random objective and extraction")
    p.add_argument("--rank-tol", type=float, default=1e-6, help="singular value threshold (default 1e-6)")
    p.add_argument("--feas-tol", type=float, default=1e-8, help="solver feasibility tolerance (default 1e-8)")
    p.add_argument("--mode", choices=("auto", "sdp-only", "fast-only"), default="auto",
                   help="closed forms then relaxations (auto), relaxations only, or closed forms only")
    p.add_argument("--perturb", type=float, default=None, metavar="EPS",
                   help="add EPS to the given diagonal entries before solving")
    p.add_argument("--retries", type=int, default=2, help="fresh objectives tried after a solver failure")
    p.add_argument("--out", default=None, help="write the result here instead of standard output")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(message)s")
    try:
        settings = DriverSettings(d=args.d, k_max=args.kmax, rank_tol=args.rank_tol, seed=args.seed,
                                  retries=args.retries, mode=args.mode,
                                  solver=SolverSettings(tol_feas=args.feas_tol, verbose=args.verbose >= 2))
        if args.perturb is not None and not args.perturb > 0:
            raise ValueError("--perturb must be positive")
    except ValueError as exc:
        print(f"cpcomplete: error: {exc}", file=sys.stderr)
        return EX_USAGE
    try:
        text = sys.stdin.read() if args.input == "-" else open(args.input, encoding="utf-8").read()
    except OSError as exc:
        print(f"cpcomplete: cannot read {args.input}: {exc.strerror}", file=sys.stderr)
        return EX_NOINPUT
    try:
        A = parse_matrix(text)
    except MatrixParseError as exc:
        print(f"cpcomplete: {args.input}: {exc}", file=sys.stderr)
        return EX_DATAERR
    solved = perturb_given_diagonals(A, args.perturb) if args.perturb else A
    result = fast_path_dispatch(solved, settings)
    doc = result_document(result, settings, A, args.perturb, solved)
    doc["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    out = dumps(doc) if args.format == "json" else render_text(doc)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return EXIT_CODES[result.verdict]


if __name__ == "__main__":
    sys.exit(main())
