"""``sdot`` command line."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .bench import PRESETS, SpecError, generate, preset, read_bundle, scale, write_bundle
from .compose import assert_finite, compose_cost
from .composed_lp import build_sdot_lp, format_lp, solve_dense_lp, split_duals
from .diagram import (
    DiagramSyntaxError,
    DiagramTypeError,
    LeafShapeError,
    NotLeftRootedError,
    UnknownLeafError,
    ValidationError,
)
from .experiment import ROUTES, rows_to_dsv, rows_to_table, run_experiment, sweep
from .safety import SOLVERS, check_safety
from .solvers import SolverError, solve_exact, solve_sinkhorn
from .tropical import ShapeError, format_entry, set_num_threads, write_matrix, write_vector

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_UNSAFE = 4

_VALIDATION_ERRORS = (
    DiagramSyntaxError,
    DiagramTypeError,
    UnknownLeafError,
    LeafShapeError,
    NotLeftRootedError,
    ValidationError,
    ShapeError,
    SpecError,
    FileNotFoundError,
    ValueError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--threads", type=int, default=d(1), metavar="N", help="worker threads for composition")
    p.add_argument("--seed", type=int, default=d(0), metavar="S", help="random seed")
    p.add_argument("--output", "-o", default=d(None), metavar="PATH", help="write the result here")
    p.add_argument("--format", choices=("table", "dsv"), default=d("table"), help="output format")


def _fmt_record(rec: dict, fmt: str) -> str:
    def show(v):
        if isinstance(v, float):
            return format_entry(v) if fmt == "dsv" else f"{v:.12g}"
        return str(v)

    if fmt == "dsv":
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(rec.keys())
        w.writerow(show(v) for v in rec.values())
        return buf.getvalue()
    width = max(len(k) for k in rec)
    return "".join(f"{k.ljust(width)}  {show(v)}\n" for k, v in rec.items())


def _emit(args, text: str) -> None:
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_scalar(s: str):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


# -- subcommands --------------------------------------------------------------

def cmd_compose(args) -> int:
    bundle = read_bundle(args.bundle)
    C = compose_cost(bundle.diagram, threads=args.threads)
    inf = assert_finite(C)
    if args.output:
        write_matrix(args.output, C)
    rec = {"diagram": bundle.name, "rows": C.shape[0], "cols": C.shape[1],
           "leaves": len(bundle.diagram.leaves()), "infinite_entries": len(inf)}
    sys.stdout.write(_fmt_record(rec, args.format))
    if args.print_matrix:
        sys.stdout.write("\n".join(",".join(format_entry(x) for x in row) for row in C) + "\n")
    return EXIT_OK


def cmd_solve(args) -> int:
    bundle = read_bundle(args.bundle)
    d, a, b = bundle.diagram, bundle.a, bundle.b
    rec = {"diagram": bundle.name, "solver": args.solver}
    plan = f = g = None
    if args.solver == "composed-lp":
        p = build_sdot_lp(d, a, b)
        if args.dump_lp:
            Path(args.dump_lp).write_text(format_lp(p) + "\n")
        kw = {"max_iter": args.max_iter} if args.max_iter else {}
        sol = solve_dense_lp(p, **kw)
        f, g = split_duals(p, sol.y)
        rec.update(value=sol.value, iterations=sol.iterations, variables=p.num_vars, constraints=p.num_rows)
    else:
        C = compose_cost(d, threads=args.threads)
        if args.solver == "exact":
            sol = solve_exact(C, a, b, allow_infinite=True)
            f, g = sol.f, sol.g
        else:
            kw = {"tol": args.tol, "anneal": args.anneal}
            if args.epsilon is not None:
                kw["epsilon"] = args.epsilon
            if args.max_iter:
                kw["max_iter"] = args.max_iter
            sol = solve_sinkhorn(C, a, b, **kw)
            rec["epsilon"] = sol.epsilon
        plan = sol.plan
        rec.update(value=sol.value, iterations=sol.iterations, marginal_error=sol.marginal_error)
    if args.plan_out and plan is not None:
        write_matrix(args.plan_out, plan)
    if args.potentials_out and f is not None:
        out = Path(args.potentials_out)
        out.mkdir(parents=True, exist_ok=True)
        write_vector(out / "f.csv", f)
        write_vector(out / "g.csv", g)
    _emit(args, _fmt_record(rec, args.format))
    return EXIT_OK


def cmd_safety(args) -> int:
    bundle = read_bundle(args.bundle)
    v = check_safety(bundle.diagram, bundle.a, bundle.b, args.lam, solver=args.solver)
    rec = {"diagram": bundle.name, **v.to_record()}
    if args.certificate_dir:
        out = Path(args.certificate_dir)
        out.mkdir(parents=True, exist_ok=True)
        if v.certificate is not None:
            write_vector(out / "f.csv", v.certificate[0])
            write_vector(out / "g.csv", v.certificate[1])
            rec["certificate"] = f"{out / 'f.csv'},{out / 'g.csv'}"
        if v.witness is not None:
            path = out / "witness.csv"
            write_matrix(path, v.witness)
            rec["witness"] = str(path)
    _emit(args, _fmt_record(rec, args.format))
    if args.fail_on_unsafe and not v.safe:
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_bench_gen(args) -> int:
    spec = preset(args.preset, seed=args.seed)
    if args.scale != 1:
        spec = scale(spec, args.scale)
    if args.integer_costs:
        spec = replace(spec, integer_costs=True)
    if not args.output:
        raise _UsageError("bench gen: an output directory is required (-o DIR)")
    bundle = generate(spec)
    write_bundle(bundle, args.output)
    sys.stdout.write(_fmt_record({"preset": spec.name, "leaves": len(bundle.diagram.leaves()),
                                  "directory": args.output}, args.format))
    return EXIT_OK


def _load_targets(targets, factor, seed):
    out = []
    for t in targets:
        if Path(t).is_dir():
            out.append(read_bundle(t))
        elif t in PRESETS:
            spec = preset(t, seed=seed)
            out.append(generate(scale(spec, factor) if factor != 1 else spec))
        else:
            raise FileNotFoundError(f"{t!r} is neither a bundle directory nor a preset name")
    return out


def _solver_list(s: str):
    names = [x.strip() for x in s.split(",") if x.strip()]
    for n in names:
        if n not in ROUTES:
            raise _UsageError(f"unknown solver {n!r}; choose from {', '.join(ROUTES)}")
    return names


def _sinkhorn_kw(args) -> dict:
    kw = {"anneal": not args.no_anneal, "tol": args.tol}
    if args.epsilon is not None:
        kw["epsilon"] = args.epsilon
    return kw


def cmd_experiment(args) -> int:
    bundles = _load_targets(args.targets, args.scale, args.seed)
    rows = run_experiment(bundles, _solver_list(args.solvers), args.repetitions, workers=args.workers,
                          sinkhorn_options=_sinkhorn_kw(args))
    _emit(args, rows_to_table(rows) if args.format == "table" else rows_to_dsv(rows))
    return EXIT_OK


def cmd_sweep(args) -> int:
    values = [_parse_scalar(v) for v in args.values.split(",") if v.strip()]
    rows = sweep(args.family, args.parameter, values, seed=args.seed,
                 solvers=_solver_list(args.solvers), repetitions=args.repetitions,
                 workers=args.workers, sinkhorn_options=_sinkhorn_kw(args))
    _emit(args, rows_to_table(rows) if args.format == "table" else rows_to_dsv(rows))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdot", description="Optimal transport over string diagrams of cost matrices.")
    parser.add_argument("--version", action="version", version=f"sdot {__version__}")
    _globals(parser, suppress=False)
    common = _Parser(add_help=False)
    _globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("compose", parents=[common], help="compose a bundle into one cost matrix")
    p.add_argument("bundle")
    p.add_argument("--print-matrix", action="store_true", help="print the matrix to stdout")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("solve", parents=[common], help="solve the OT of a bundle")
    p.add_argument("bundle")
    p.add_argument("--solver", choices=SOLVERS, default="exact")
    p.add_argument("--epsilon", type=float, default=None, help="Sinkhorn regularization")
    p.add_argument("--tol", type=float, default=1e-9, help="Sinkhorn marginal tolerance (L1)")
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--anneal", action="store_true", help="Sinkhorn: halve epsilon from max(C)/10")
    p.add_argument("--plan-out", metavar="FILE", help="write the plan as a matrix file")
    p.add_argument("--potentials-out", metavar="DIR", help="write f.csv and g.csv")
    p.add_argument("--dump-lp", metavar="FILE", help="composed-lp: write the LP as equations")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("safety", parents=[common], help="decide lambda <= OT with a certificate")
    p.add_argument("bundle")
    p.add_argument("--lambda", dest="lam", type=float, required=True, metavar="L")
    p.add_argument("--solver", choices=SOLVERS, default="exact")
    p.add_argument("--fail-on-unsafe", action="store_true", help="exit with status 4 on Unsafe")
    p.add_argument("--certificate-dir", metavar="DIR", help="write the certificate or witness here")
    p.set_defaults(func=cmd_safety)

    p = sub.add_parser("bench", help="benchmark instances")
    bsub = p.add_subparsers(dest="bench_command", parser_class=_Parser, metavar="ACTION")
    bsub.required = True
    g = bsub.add_parser("gen", parents=[common], help="generate a preset bundle")
    g.add_argument("--preset", required=True, choices=sorted(PRESETS))
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--integer-costs", action="store_true")
    g.set_defaults(func=cmd_bench_gen)

    def timing_opts(q):
        q.add_argument("--solvers", default=",".join(ROUTES), help="comma-separated subset of MonLP,SH,CompLP")
        q.add_argument("--repetitions", type=int, default=1)
        q.add_argument("--workers", type=int, default=1)
        q.add_argument("--epsilon", type=float, default=None, help="SH regularization (default 1e-3*max(C))")
        q.add_argument("--tol", type=float, default=1e-6, help="SH marginal tolerance")
        q.add_argument("--no-anneal", action="store_true")

    p = sub.add_parser("experiment", parents=[common], help="time MonLP, SH and CompLP on bundles")
    p.add_argument("targets", nargs="+", help="bundle directories or preset names")
    p.add_argument("--scale", type=float, default=1.0, help="scale factor for preset names")
    timing_opts(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", parents=[common], help="time all routes across one family parameter")
    p.add_argument("--family", required=True, choices=("BRooms", "URooms", "BChains", "UChains"))
    p.add_argument("--parameter", required=True, help="e.g. H, width, rooms")
    p.add_argument("--values", required=True, help="comma-separated values")
    timing_opts(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 0:
            raise _UsageError("--threads must be >= 0")
        set_num_threads(args.threads)
        return args.func(args)
    except _UsageError as e:
        sys.stderr.write(str(e) + ("\n" if not str(e).endswith("\n") else ""))
        return EXIT_USAGE
    except SolverError as e:
        sys.stderr.write(f"sdot: solver failure: {e}\n")
        return EXIT_SOLVER
    except _VALIDATION_ERRORS as e:
        sys.stderr.write(f"sdot: invalid input: {type(e).__name__}: {e}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
