"""Command-line front end.

Exit status: 0 on success, 2 for invalid arguments, 3 when a numerical
step fails (CG non-convergence, geometry outside the box, failed
projection, or a failed check).
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
import warnings

from . import bench
from .errors import NumericalError
from .evolve import run_evolution, source_free
from .levelset import make_problem, verify_manufactured_solution

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
MASS_TOL = 1e-3
RESIDUAL_TOL = 1e-4
STEP_HEADER = ("m", "t_m", "dofs", "cg_iters", "mass", "L2_error")


class UsageError(ValueError):
    pass


def parse_levels(text: str) -> list[int]:
    """``"1..5"`` -> ``[1, 2, 3, 4, 5]``; a single integer is also accepted."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"empty or invalid level range {text!r}")
    return list(range(lo, hi + 1))


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bulksurf",
                                description="Unfitted bulk finite elements for surface PDEs.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(q):
        q.add_argument("--rtol", type=_positive, default=1e-8, help="relative CG residual target")
        q.add_argument("--allow-large", action="store_true", help="permit 3D levels above 5")

    s = sub.add_parser("solve", help="solve a stationary problem on one level")
    s.add_argument("--method", choices=("sif", "nbm"), required=True)
    s.add_argument("--problem", choices=("torus", "potato"), required=True)
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--gradient", choices=("full", "tangential", "projected"), default="full")
    s.add_argument("--out", help="CSV file for the result row")
    common(s)

    c = sub.add_parser("convergence", help="run a refinement study")
    c.add_argument("--method", choices=bench.METHODS, required=True)
    c.add_argument("--problem", choices=("torus", "potato", "ellipse2d"), required=True)
    c.add_argument("--levels", type=parse_levels, required=True, help="level range A..B")
    c.add_argument("--gradient", choices=("full", "tangential", "projected"), default="full")
    c.add_argument("--out", required=True)
    common(c)

    e = sub.add_parser("evolve", help="advection-diffusion on the evolving ellipse")
    e.add_argument("--problem", choices=("ellipse2d",), default="ellipse2d")
    e.add_argument("--level", type=int, required=True)
    e.add_argument("--tau-scale", type=_positive, default=2.0,
                   help="step size tau = scale * (2**-level)**2")
    e.add_argument("--t-end", type=_positive, default=0.5)
    e.add_argument("--check-mass", action="store_true",
                   help=f"run with f = 0 and fail if the relative mass drift exceeds {MASS_TOL:g}")
    e.add_argument("--out", required=True)
    e.add_argument("--rtol", type=_positive, default=1e-8)

    v = sub.add_parser("verify", help="manufactured-solution residual check")
    v.add_argument("--problem", choices=("torus", "potato", "ellipse2d"), required=True)
    v.add_argument("--samples", type=int, default=20)
    return p


def _check_method_gradient(method, gradient):
    if gradient not in bench.GRAD_MODES[method]:
        raise UsageError(f"--gradient {gradient} is not available for --method {method}")


def _cmd_solve(args) -> int:
    _check_method_gradient(args.method, args.gradient)
    prob = make_problem(args.problem)
    try:
        bench.check_level(prob.dim, args.level, args.allow_large)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    r = bench.solve_stationary(prob, args.method, args.level, args.gradient, args.rtol,
                               args.allow_large)
    row = bench.ConvergenceRow(r.level, bench.round_sig(r.h), r.dofs, bench.round_sig(r.l2_error),
                               None, bench.round_sig(r.h1_error), None, r.cg_iters,
                               bench.round_sig(r.wall_s))
    print(f"{args.method} {args.problem} k={r.level} h={r.h:.6g} dofs={r.dofs} "
          f"L2={r.l2_error:.6g} H1={r.h1_error:.6g} cg={r.cg_iters} wall={r.wall_s:.3g}s")
    if args.out:
        bench.write_csv([row], args.out)
    return EXIT_OK


def _cmd_convergence(args) -> int:
    _check_method_gradient(args.method, args.gradient)
    prob = make_problem(args.problem)
    if (args.method == "evolve") == prob.is_stationary:
        raise UsageError(f"--method {args.method} does not apply to --problem {args.problem}")
    try:
        for k in args.levels:
            bench.check_level(prob.dim, k, args.allow_large and args.method != "evolve")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(",".join(bench.CSV_HEADER))

    def show(row):
        print(",".join(bench._fmt(getattr(row, f)) for f in bench.CSV_HEADER), flush=True)

    bench.run_convergence(args.method, prob, args.levels, args.gradient, args.out,
                          rtol=args.rtol, allow_large=args.allow_large, progress=show)
    return EXIT_OK


def _cmd_evolve(args) -> int:
    prob = make_problem(args.problem)
    try:
        bench.check_level(prob.dim, args.level)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.check_mass:
        prob = source_free(prob)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_HEADER)

        def log(rec):
            err = "" if math.isnan(rec.l2_error) else f"{rec.l2_error:.6g}"
            w.writerow([rec.m, f"{rec.t:.6g}", rec.dofs, rec.cg_iters, f"{rec.mass:.6g}", err])

        try:
            with warnings.catch_warnings():
                warnings.simplefilter("always")
                res = run_evolution(prob, args.level, tau_scale=args.tau_scale, t_end=args.t_end,
                                    rtol=args.rtol, errors=not args.check_mass, callback=log,
                                    strict_tau=args.check_mass)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    print(f"steps={len(res.records) - 1} h={res.h:.6g} dofs={res.final.active.ndofs}")
    if args.check_mass:
        drift = res.mass_drift
        print(f"relative mass drift {drift:.3e} (limit {MASS_TOL:g})")
        return EXIT_OK if drift <= MASS_TOL else EXIT_NUMERICAL
    print(f"max L2 error {res.max_error:.6g}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be positive")
    res = verify_manufactured_solution(make_problem(args.problem), samples=args.samples)
    print(f"{args.problem}: max PDE residual {res:.3e}")
    return EXIT_OK if res <= RESIDUAL_TOL else EXIT_NUMERICAL


COMMANDS = {"solve": _cmd_solve, "convergence": _cmd_convergence,
            "evolve": _cmd_evolve, "verify": _cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bulksurf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"bulksurf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"bulksurf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
