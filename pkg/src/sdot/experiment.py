"""Timing and accuracy runs of the three solution routes over benchmark bundles.

``MonLP`` composes the cost matrix and runs the exact solver, ``SH`` composes
and runs Sinkhorn, ``CompLP`` solves the hierarchical LP directly.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Optional, Sequence

from .bench import Bundle, family_spec, generate
from .compose import compose_cost
from .composed_lp import build_sdot_lp, solve_dense_lp
from .solvers import solve_exact, solve_sinkhorn

__all__ = [
    "ExperimentRow",
    "ROUTES",
    "DEFAULT_SINKHORN",
    "run_experiment",
    "sweep",
    "relative_error",
    "rows_to_dsv",
    "rows_from_dsv",
    "rows_to_table",
]

ROUTES = ("MonLP", "SH", "CompLP")
# Sinkhorn settings used by the experiment runner unless overridden
DEFAULT_SINKHORN = {"anneal": True, "tol": 1e-6}
DEFAULT_LP_MAX_VARS = 20_000
EPS_DIV = 1e-300


@dataclass
class ExperimentRow:
    diagram: str
    n_oot: int
    solver: str
    t_compose: float
    t_solve: float
    t_total: float
    value: float
    E: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def relative_error(v: float, exact: float) -> float:
    return abs(v - exact) / max(abs(exact), EPS_DIV)


def _run_route(bundle: Bundle, route: str, sinkhorn_options: dict, lp_options: dict, lp_max_vars: int):
    """Return ``(t_compose, t_solve, value)`` for one route."""
    d, a, b = bundle.diagram, bundle.a, bundle.b
    if route == "CompLP":
        t0 = time.perf_counter()
        p = build_sdot_lp(d, a, b)
        if p.num_vars > lp_max_vars:
            raise MemoryError(f"hierarchical LP has {p.num_vars} variables (limit {lp_max_vars})")
        value = solve_dense_lp(p, **lp_options).value
        return 0.0, time.perf_counter() - t0, value
    t0 = time.perf_counter()
    C = compose_cost(d)
    t1 = time.perf_counter()
    if route == "MonLP":
        value = solve_exact(C, a, b).value
    elif route == "SH":
        value = solve_sinkhorn(C, a, b, **sinkhorn_options).value
    else:
        raise ValueError(f"unknown route {route!r}")
    t2 = time.perf_counter()
    return t1 - t0, t2 - t1, value


def _bundle_rows(bundle, solvers, repetitions, sinkhorn_options, lp_options, lp_max_vars):
    n = len(bundle.diagram.leaves())
    results = {}
    for route in solvers:
        best = None
        try:
            for _ in range(repetitions):
                tc, ts, v = _run_route(bundle, route, sinkhorn_options, lp_options, lp_max_vars)
                if best is None or tc + ts < best[0] + best[1]:
                    best = (tc, ts, v)
            results[route] = (*best, "ok")
        except Exception as e:  # recorded in the row, the run goes on
            results[route] = (math.nan, math.nan, math.nan, f"error: {type(e).__name__}: {e}")
    if "MonLP" in results and results["MonLP"][3] == "ok":
        exact = results["MonLP"][2]
    else:
        try:
            exact = solve_exact(compose_cost(bundle.diagram), bundle.a, bundle.b).value
        except Exception:
            exact = math.nan
    rows = []
    for route in solvers:
        tc, ts, v, status = results[route]
        rows.append(ExperimentRow(
            diagram=bundle.name,
            n_oot=n,
            solver=route,
            t_compose=tc,
            t_solve=ts,
            t_total=tc + ts,
            value=v,
            E=relative_error(v, exact) if status == "ok" else math.nan,
            status=status,
        ))
    return rows


def run_experiment(
    bundles: Iterable[Bundle],
    solvers: Sequence[str] = ROUTES,
    repetitions: int = 1,
    *,
    workers: int = 1,
    sinkhorn_options: Optional[dict] = None,
    lp_options: Optional[dict] = None,
    lp_max_vars: int = DEFAULT_LP_MAX_VARS,
) -> list[ExperimentRow]:
    """One row per (bundle, solver).

    With ``repetitions > 1`` the fastest repetition is reported.  ``E`` is
    measured against the MonLP value (computed untimed if MonLP is not among
    ``solvers``).  Bundles run on ``workers`` threads; the default of one
    keeps timings free of interference.
    """
    for s in solvers:
        if s not in ROUTES:
            raise ValueError(f"unknown solver {s!r}; choose from {ROUTES}")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    sh = dict(DEFAULT_SINKHORN if sinkhorn_options is None else sinkhorn_options)
    lp = dict(lp_options or {})
    bundles = list(bundles)

    def job(bundle):
        return _bundle_rows(bundle, solvers, repetitions, sh, lp, lp_max_vars)

    if workers <= 1:
        chunks = [job(b) for b in bundles]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, bundles))
    return [row for chunk in chunks for row in chunk]


def sweep(
    family: str,
    parameter: str,
    values: Iterable,
    *,
    seed: int = 0,
    fixed: Optional[dict] = None,
    **kw,
) -> list[ExperimentRow]:
    """Run every route on ``family_spec(family, parameter=value)`` for each value.

    Rows are named ``family[parameter=value]``.
    """
    bundles = []
    for v in values:
        params = dict(fixed or {})
        params[parameter] = v
        spec = family_spec(family, seed=seed, name=f"{family}[{parameter}={v}]", **params)
        bundles.append(generate(spec))
    return run_experiment(bundles, **kw)


# -- output ------------------------------------------------------------------

_FIELDS = [f.name for f in fields(ExperimentRow)]
_TYPES = {f.name: f.type for f in fields(ExperimentRow)}


def rows_to_dsv(rows: Iterable[ExperimentRow], delimiter: str = "\t") -> str:
    """Delimiter-separated text with a header; floats use ``repr`` so they read back exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(_FIELDS)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in asdict(r).values()])
    return buf.getvalue()


def rows_from_dsv(text: str, delimiter: str = "\t") -> list[ExperimentRow]:
    rd = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = next(rd, None)
    if header != _FIELDS:
        raise ValueError(f"unexpected header {header!r}")
    out = []
    for rec in rd:
        if not rec:
            continue
        vals = {}
        for name, raw in zip(_FIELDS, rec):
            t = _TYPES[name]
            vals[name] = int(raw) if t in ("int", int) else float(raw) if t in ("float", float) else raw
        out.append(ExperimentRow(**vals))
    return out


def rows_to_table(rows: Sequence[ExperimentRow]) -> str:
    """Fixed-width text table for terminals."""
    head = ["diagram", "#oOT", "solver", "t_C", "t_solve", "t_total", "value", "E", "status"]
    body = [
        [r.diagram, str(r.n_oot), r.solver, f"{r.t_compose:.3f}", f"{r.t_solve:.3f}",
         f"{r.t_total:.3f}", f"{r.value:.6g}", f"{r.E:.1e}", r.status]
        for r in rows
    ]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip() for line in [head] + body]
    return "\n".join(lines) + "\n"
