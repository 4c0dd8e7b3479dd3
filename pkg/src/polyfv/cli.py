"""Command-line interface: ``polyfv {gen,quality,check,solve,study,export-vtk}``.

Every command exits with status 0 when its checks pass and 1 otherwise;
errors in the input files exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import io
from .errors import PolyFVError
from .generate import FAMILIES, GenSpec, calibrate, generate
from .mesh import audit_mesh
from .operators import GRAD_SCHEMES
from .quality import CSV_COLUMNS, quality_report
from .solver import solve_deferred
from .study import check_expected, error_norms, export_vtk, manufactured_problem, run_study


def _alpha(text):
    kind, _, value = text.partition(":")
    if kind != "const" or not value:
        raise argparse.ArgumentTypeError("expected const:<value>")
    v = float(value)
    if v <= 0:
        raise argparse.ArgumentTypeError("diffusivity must be positive")
    return v


def _levels(text):
    return [int(t) for t in text.split(",") if t]


def cmd_gen(args):
    if args.target_theta is not None:
        amp, achieved = calibrate(args.family, args.n, args.target_theta, seed=args.seed)
        print(f"calibrated amplitude {amp:.6f} -> theta_max {achieved:.3f} deg")
        spec = GenSpec.default(args.family, args.n, args.seed).with_amplitude(amp)
    else:
        spec = GenSpec.default(args.family, args.n, args.seed)
        if args.skew is not None:
            spec = GenSpec(args.family, args.n, skew=args.skew, jitter=spec.jitter, seed=args.seed)
        if args.jitter is not None:
            spec = GenSpec(args.family, args.n, skew=spec.skew, jitter=args.jitter, seed=args.seed)
    mesh = generate(spec)
    report = audit_mesh(mesh)
    meta = {"family": spec.family, "n": spec.n, "skew": spec.skew, "jitter": spec.jitter,
            "seed": spec.seed}
    io.save_mesh(mesh, args.out, meta)
    print(f"{mesh!r} -> {args.out}")
    print(report.summary())
    return 0 if report.passed else 1


def cmd_quality(args):
    mesh = io.load_mesh(args.mesh)
    family = args.family or io.load_meta(args.mesh).get("family", "")
    q = quality_report(mesh, family)
    if args.csv:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerow(q.csv_row())
    elif args.json:
        print(json.dumps(q.as_dict(), indent=2))
    else:
        for k, v in q.as_dict().items():
            print(f"{k:>15s}: {v}")
    return 0


def cmd_check(args):
    report = audit_mesh(io.load_mesh(args.mesh))
    print(report.summary())
    return 0 if report.passed else 1


def cmd_solve(args):
    mesh = io.load_mesh(args.mesh)
    u_exact, f, _ = manufactured_problem()
    u, slog = solve_deferred(
        mesh, args.alpha, f, args.grad, outer_tol=args.outer_tol, max_outer=args.max_outer,
        inner_tol=args.inner_tol, metric=args.outer_metric,
    )
    extra = {"log": slog.as_dict()}
    if args.alpha == 1.0:
        e2, einf = error_norms(mesh, u, u_exact)
        extra.update(e2=e2, einf=einf)
        print(f"e2={e2:.6e} einf={einf:.6e}")
    io.save_solution(args.out, u, slog.outer_iters, slog.stagnated, extra)
    print(f"outer={slog.outer_iters} inner={slog.inner_iters} residual={slog.final_residual:.2e} "
          f"stagnated={slog.stagnated} -> {args.out}")
    return 0 if slog.converged and slog.final_residual <= max(10 * args.inner_tol, 1e-15) else 1


def cmd_study(args):
    report = run_study(args.family, args.levels, args.grad, args.out, amplitude=args.amplitude,
                       outer_tol=args.outer_tol, verbose=args.verbose)
    print(report.table())
    ok, msg = check_expected(report, args.family, args.grad)
    props = all(r.weak_form_ok for r in report.rows)
    print(f"{'PASS' if ok else 'FAIL'} {msg}; weak-form identity {'ok' if props else 'violated'}")
    return 0 if ok and props else 1


def cmd_export_vtk(args):
    mesh = io.load_mesh(args.mesh)
    fields = {}
    if args.solution:
        fields["u"] = np.asarray(io.load_solution(args.solution)["u"], dtype=float)
    export_vtk(mesh, fields, args.out)
    print(f"{mesh.n_cells} cells -> {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="polyfv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a mesh and audit it")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--skew", type=float)
    g.add_argument("--jitter", type=float)
    g.add_argument("--seed", type=int, default=GenSpec.__dataclass_fields__["seed"].default)
    g.add_argument("--target-theta", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    q = sub.add_parser("quality", help="mesh quality report")
    q.add_argument("--mesh", required=True)
    q.add_argument("--family")
    fmt = q.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true")
    fmt.add_argument("--csv", action="store_true")
    q.set_defaults(func=cmd_quality)

    c = sub.add_parser("check", help="audit mesh invariants")
    c.add_argument("--mesh", required=True)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("solve", help="solve the manufactured problem on a mesh")
    s.add_argument("--mesh", required=True)
    s.add_argument("--grad", choices=GRAD_SCHEMES, default="gauss")
    s.add_argument("--alpha", type=_alpha, default=1.0)
    s.add_argument("--outer-tol", type=float, default=1e-4)
    s.add_argument("--outer-metric", choices=("increment", "residual"), default="increment")
    s.add_argument("--inner-tol", type=float, default=1e-16)
    s.add_argument("--max-outer", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    st = sub.add_parser("study", help="convergence study on one family")
    st.add_argument("--family", choices=FAMILIES, required=True)
    st.add_argument("--levels", type=_levels)
    st.add_argument("--grad", choices=GRAD_SCHEMES, default="gauss")
    st.add_argument("--amplitude", type=float)
    st.add_argument("--outer-tol", type=float, default=1e-4)
    st.add_argument("--out", required=True)
    st.set_defaults(func=cmd_study)

    e = sub.add_parser("export-vtk", help="write a legacy VTK file")
    e.add_argument("--mesh", required=True)
    e.add_argument("--solution")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_vtk)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PolyFVError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
