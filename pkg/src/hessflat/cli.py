"""Command line entry point: ``hessflat {solve,exponent,iterate,sweep,check}``.

Exit codes: 0 success, 2 invalid spec, 3 solver non-convergence,
4 insufficient resolution.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from hessflat.errors import SpecError
from hessflat.experiment import EXIT_OK, EXIT_SPEC, emit_report, run_experiment, run_sweep
from hessflat.scenarios import ScenarioSpec


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="results", help="results root (default: results)")
    common.add_argument("--tol", type=float, default=None, help="override the solver tolerance")
    common.add_argument("--seed", type=int, default=None, help="override the sampling seed")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    p = argparse.ArgumentParser(prog="hessflat", description="Flatness measurements at Hessian-degenerate points.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="solve the Dirichlet problem and persist it")
    s.add_argument("spec")
    s = sub.add_parser("exponent", parents=[common], help="solve, then fit flatness exponents")
    s.add_argument("spec")
    s.add_argument("--mode", choices=("measure", "cascade", "both"), default="both")
    s = sub.add_parser("iterate", parents=[common], help="run the affine cascade to a given depth")
    s.add_argument("spec")
    s.add_argument("--depth", type=int, required=True)
    s = sub.add_parser("sweep", parents=[common], help="run every spec in a directory")
    s.add_argument("directory")
    s.add_argument("--jobs", type=int, default=1)
    s = sub.add_parser("check", parents=[common], help="hypotheses only: ellipticity, seminorms, Dini")
    s.add_argument("spec")
    return p


def _load(args):
    spec = ScenarioSpec.load(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    return spec


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    say = (lambda *a, **k: None) if args.quiet else print

    if args.command == "sweep":
        if args.jobs < 1:
            print("error: --jobs must be >= 1", file=sys.stderr)
            return EXIT_SPEC
        outcomes, table = run_sweep(args.directory, args.out, jobs=args.jobs, tol=args.tol)
        for path, code, directory, msg in outcomes:
            say(f"{path}: exit {code}" + (f" ({msg})" if msg else f" -> {directory}"))
        if table.rows:
            say(table.to_text(), end="")
        return max((code for _, code, _, _ in outcomes), default=EXIT_OK)

    try:
        spec = _load(args)
    except (SpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC

    depth = None
    if args.command == "solve":
        stages = ("solve",)
    elif args.command == "check":
        stages = ("hypotheses",)
    elif args.command == "iterate":
        if args.depth < 1:
            print("error: --depth must be >= 1", file=sys.stderr)
            return EXIT_SPEC
        stages, depth = ("cascade",), args.depth
    else:
        stages = ("hypotheses",) + {"measure": ("measure",), "cascade": ("cascade",),
                                    "both": ("measure", "cascade")}[args.mode]
    res = run_experiment(spec, out=args.out, stages=stages, depth=depth, tol=args.tol)
    for e in res.errors:
        print(f"error [{e['stage']}] {e['kind']}: {e['message']}", file=sys.stderr)
    say(emit_report(res, path=None) if res.directory is None else (res.directory / "report.txt").read_text(), end="")
    if res.directory is not None:
        say(f"results in {res.directory}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
