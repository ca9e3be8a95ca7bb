"""The hierarchical LP over every plan of a diagram, solved without composing costs.

Each leaf gets one plan variable per finite cost entry; an identity factor
gets one variable per wire.  Flow balance ties the column sums of one stage
to the row sums of the next.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .diagram import AlignedDiagram, Id, Leaf, validate_aligned
from .solvers import BALANCE_TOL, SolverError, as_marginal, solve_exact
from .tropical import ShapeError

__all__ = [
    "LpProblem",
    "LpSolution",
    "LpInfeasibleError",
    "LpUnboundedError",
    "LpIterationLimitError",
    "EssentiallyUnbalancedError",
    "build_sdot_lp",
    "build_ot_lp",
    "solve_dense_lp",
    "solve_composed",
    "split_duals",
    "leaf_plans",
    "glue_plans",
    "seq_ot",
    "par_ot",
    "format_lp",
]


class LpInfeasibleError(SolverError):
    pass


class LpUnboundedError(SolverError):
    pass


class LpIterationLimitError(SolverError):
    pass


class EssentiallyUnbalancedError(ValueError):
    def __init__(self, block: int, left: float, right: float):
        name = "first" if block == 1 else "second"
        super().__init__(f"{name} blocks are not balanced: {left!r} != {right!r}")
        self.block = block


@dataclass
class LpProblem:
    """``min c.x  s.t.  A x = rhs, x >= 0``.

    ``var_map[k]`` is ``(factor, i, j)`` where ``factor`` is ``"head"`` or
    ``(layer, position)``.  ``source_rows`` and ``target_rows`` index the
    constraints that pin the boundary marginals.
    """

    c: np.ndarray
    A: sp.csr_matrix
    rhs: np.ndarray
    var_map: list[tuple] = field(default_factory=list)
    row_labels: list[str] = field(default_factory=list)
    source_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    target_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def num_vars(self) -> int:
        return self.A.shape[1]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def residual(self, x) -> float:
        """Largest equality-constraint violation of ``x``."""
        return float(np.abs(self.A @ np.asarray(x) - self.rhs).max(initial=0.0))


@dataclass
class LpSolution:
    value: float
    x: np.ndarray
    y: np.ndarray
    iterations: int
    # rows found linearly dependent during phase one
    dropped_rows: list[int] = field(default_factory=list)

    @property
    def dual_value(self) -> float:
        return float(self._rhs @ self.y)

    _rhs: np.ndarray = field(default=None, repr=False)


class _Builder:
    def __init__(self):
        self.cols: list[int] = []
        self.rows: list[int] = []
        self.vals: list[float] = []
        self.c: list[float] = []
        self.var_map: list[tuple] = []

    def add_block(self, label, cost: np.ndarray, row_base: int, in_row0: Optional[int], out_row0: int,
                  diagonal: bool = False):
        """Variables for one factor.  Its row sums enter constraints
        ``in_row0 + i`` with sign -1 (or +1 for the head), its column sums
        enter ``out_row0 + j`` with sign +1."""
        if diagonal:
            idx = [(i, i) for i in range(cost.shape[0])]
        else:
            ii, jj = np.nonzero(np.isfinite(cost))
            idx = zip(ii.tolist(), jj.tolist())
        for i, j in idx:
            k = len(self.c)
            self.c.append(0.0 if diagonal else float(cost[i, j]))
            self.var_map.append((label, i, j))
            if in_row0 is None:
                self.rows.append(row_base + i)
                self.vals.append(1.0)
            else:
                self.rows.append(in_row0 + i)
                self.vals.append(-1.0)
            self.cols.append(k)
            self.rows.append(out_row0 + j)
            self.vals.append(1.0)
            self.cols.append(k)


def build_sdot_lp(d: AlignedDiagram, a, b) -> LpProblem:
    """Assemble the LP whose optimum is the OT value of the diagram."""
    validate_aligned(d).raise_if_failed()
    a = as_marginal(a, d.source_size, "source marginal")
    b = as_marginal(b, d.target_size, "target marginal")
    head = d.head
    labels = [f"src[{i}]" for i in range(head.m)]
    bld = _Builder()
    # constraint blocks: sources, one balance block per layer, targets
    n_src = head.m
    widths = [head.n] + [sum(f.n for f in layer) for layer in d.layers]
    balance0 = n_src
    block_start = [balance0]
    for w in widths[:-1]:
        block_start.append(block_start[-1] + w)
    # block_start[k] = first row of the balance block feeding layer k+1; the last entry is the targets
    for k, w in enumerate(widths[:-1], 1):
        labels += [f"bal{k}[{i}]" for i in range(w)]
    target0 = block_start[-1]
    labels += [f"dst[{j}]" for j in range(widths[-1])]

    bld.add_block("head", head.cost, 0, None, block_start[0])
    for k, layer in enumerate(d.layers):
        in_row = block_start[k]
        out_row = block_start[k + 1]
        r = c = 0
        for pos, f in enumerate(layer):
            if isinstance(f, Leaf):
                bld.add_block((k + 1, pos), f.cost, 0, in_row + r, out_row + c)
                r += f.m
                c += f.n
            elif isinstance(f, Id):
                bld.add_block((k + 1, pos), np.zeros((f.n, f.n)), 0, in_row + r, out_row + c, diagonal=True)
                r += f.n
                c += f.n
    n_rows = len(labels)
    A = sp.csr_matrix((bld.vals, (bld.rows, bld.cols)), shape=(n_rows, len(bld.c)))
    rhs = np.zeros(n_rows)
    rhs[:n_src] = a
    rhs[target0:] = b
    return LpProblem(
        c=np.array(bld.c, dtype=np.float64),
        A=A,
        rhs=rhs,
        var_map=bld.var_map,
        row_labels=labels,
        source_rows=np.arange(n_src),
        target_rows=np.arange(target0, n_rows),
    )


def build_ot_lp(C, a, b) -> LpProblem:
    """The plain transportation LP of one cost matrix."""
    C = np.asarray(C, dtype=np.float64)
    return build_sdot_lp(AlignedDiagram(Leaf("C", C.shape[0], C.shape[1], C), ()), a, b)


def format_lp(p: LpProblem, max_terms: int = 12) -> str:
    """Human-readable equation listing, for debugging."""
    def var(k):
        lab, i, j = p.var_map[k]
        name = "A" if lab == "head" else f"B{lab[0]}_{lab[1]}"
        return f"{name}[{i},{j}]"

    lines = ["minimize"]
    terms = [f"{p.c[k]:g}*{var(k)}" for k in range(p.num_vars) if p.c[k] != 0]
    lines.append("  " + " + ".join(terms[:max_terms]) + (" + ..." if len(terms) > max_terms else ""))
    lines.append("subject to")
    A = p.A.tocsr()
    for r in range(p.num_rows):
        row = A.getrow(r)
        parts = [("+ " if v > 0 else "- ") + var(k) for k, v in zip(row.indices, row.data)]
        lhs = " ".join(parts[:max_terms]) + (" ..." if len(parts) > max_terms else "")
        lines.append(f"  {p.row_labels[r]}: {lhs} = {p.rhs[r]:.17g}")
    lines.append(f"  all {p.num_vars} variables >= 0")
    return "\n".join(lines)


# -- dense two-phase simplex ---------------------------------------------------

def _pivot(T: np.ndarray, r: int, s: int) -> None:
    T[r] /= T[r, s]
    col = T[:, s]
    nz = np.flatnonzero(col)
    nz = nz[nz != r]
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])


def _choose_entering(d: np.ndarray, tol: float, rule: str) -> int:
    if rule == "bland":
        cand = np.flatnonzero(d < -tol)
        return int(cand[0]) if cand.size else -1
    s = int(np.argmin(d))
    return s if d[s] < -tol else -1


def _choose_leaving(T: np.ndarray, basis: np.ndarray, s: int, ptol: float) -> int:
    col = T[:-1, s]
    pos = np.flatnonzero(col > ptol)
    if pos.size == 0:
        return -1
    ratios = T[pos, -1] / col[pos]
    best = ratios.min()
    ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
    # Bland: smallest basic variable index among ties
    return int(ties[np.argmin(basis[ties])])


def _run(T, basis, ncols, rule, tol, ptol, max_iter, it):
    while True:
        s = _choose_entering(T[-1, :ncols], tol, rule)
        if s < 0:
            return it
        r = _choose_leaving(T, basis, s, ptol)
        if r < 0:
            raise LpUnboundedError("objective is unbounded below")
        if it >= max_iter:
            raise LpIterationLimitError(f"simplex exceeded {max_iter} pivots")
        _pivot(T, r, s)
        basis[r] = s
        it += 1


def solve_dense_lp(p: LpProblem, *, pivot_rule: str = "bland", max_iter: Optional[int] = None) -> LpSolution:
    """Two-phase primal simplex on a dense tableau.

    Meant for small problems (a few thousand variables).  Returns the primal
    optimum and a dual solution ``y`` with ``A^T y <= c`` and
    ``rhs . y = c . x``.
    """
    if pivot_rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pivot rule {pivot_rule!r}")
    A = p.A.toarray() if sp.issparse(p.A) else np.array(p.A, dtype=np.float64)
    rhs = np.array(p.rhs, dtype=np.float64)
    c = np.array(p.c, dtype=np.float64)
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    sign = np.where(rhs < 0, -1.0, 1.0)
    A *= sign[:, None]
    rhs *= sign
    scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    tol = 1e-9 * scale
    ptol = 1e-9

    # phase one: artificials in columns n .. n+m-1
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = rhs
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -rhs.sum()
    basis = np.arange(n, n + m)
    it = _run(T, basis, n + m, pivot_rule, 1e-12, ptol, max_iter, 0)
    infeas = -T[-1, -1]
    if infeas > 1e-9 * max(1.0, float(np.abs(rhs).sum())):
        raise LpInfeasibleError(f"constraints are infeasible (phase-one residual {infeas:.3e})")

    # drive remaining artificials out; rows that cannot pivot are redundant
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= n:
            row = T[r, :n]
            cand = np.flatnonzero(np.abs(row) > ptol)
            if cand.size:
                _pivot(T, r, int(cand[0]))
                basis[r] = int(cand[0])
            else:
                keep[r] = False
    dropped = [int(r) for r in np.flatnonzero(~keep)]
    rows = np.flatnonzero(keep)
    T = np.vstack([T[rows][:, list(range(n)) + [n + m]], np.zeros((1, n + 1))])
    basis = basis[rows]

    # phase two
    T[-1, :n] = c
    T[-1, -1] = 0.0
    for r, bv in enumerate(basis):
        if T[-1, bv] != 0:
            T[-1] -= T[-1, bv] * T[r]
    it = _run(T, basis, n, pivot_rule, tol, ptol, max_iter, it)

    x = np.zeros(n)
    x[basis] = np.maximum(T[:-1, -1], 0.0)
    # duals from B^T y = c_B on the kept rows
    B = A[np.ix_(rows, basis)]
    y_kept = np.linalg.solve(B.T, c[basis])
    y = np.zeros(m)
    y[rows] = y_kept
    y *= sign
    sol = LpSolution(value=float(c @ x), x=x, y=y, iterations=it, dropped_rows=dropped)
    sol._rhs = np.array(p.rhs, dtype=np.float64)
    return sol


def split_duals(p: LpProblem, y) -> tuple[np.ndarray, np.ndarray]:
    """Potentials ``(f, g)`` on the two boundaries from a dual LP solution."""
    y = np.asarray(y)
    return y[p.source_rows].copy(), y[p.target_rows].copy()


def solve_composed(d: AlignedDiagram, a, b, **kw) -> tuple[LpProblem, LpSolution]:
    p = build_sdot_lp(d, a, b)
    return p, solve_dense_lp(p, **kw)


def leaf_plans(d: AlignedDiagram, p: LpProblem, x) -> list[np.ndarray]:
    """The head plan followed by one full block-diagonal plan per layer."""
    shapes = [(d.head.m, d.head.n)]
    offsets = {}
    for k, layer in enumerate(d.layers, 1):
        r = c = 0
        for pos, f in enumerate(layer):
            offsets[(k, pos)] = (r, c)
            m, n = (f.m, f.n) if isinstance(f, Leaf) else (f.n, f.n)
            r += m
            c += n
        shapes.append((r, c))
    plans = [np.zeros(s) for s in shapes]
    for (label, i, j), v in zip(p.var_map, np.asarray(x)):
        if label == "head":
            plans[0][i, j] += v
        else:
            r, c = offsets[label]
            plans[label[0]][r + i, c + j] += v
    return plans


def glue_plans(plans) -> np.ndarray:
    """A plan on the composed cost matrix built from consecutive leaf plans.

    Mass arriving at a middle point is forwarded in proportion to how the next
    plan spreads that point's mass, so the result keeps the outer marginals and
    costs at most the sum of the leaf plan costs.
    """
    P = np.clip(np.asarray(plans[0], dtype=np.float64), 0.0, None)
    for Q in plans[1:]:
        Q = np.clip(np.asarray(Q, dtype=np.float64), 0.0, None)
        out = Q.sum(axis=1)
        scale = np.divide(1.0, out, out=np.zeros_like(out), where=out > 0)
        P = (P * scale[None, :]) @ Q
    return P


def seq_ot(A, B, a, b, **kw) -> float:
    """Optimal joint cost of plans ``P^A`` and ``P^B`` with matching middle marginals."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"inner sizes differ: {A.shape[1]} != {B.shape[0]}")
    d = AlignedDiagram(Leaf("A", A.shape[0], A.shape[1], A), ((Leaf("B", B.shape[0], B.shape[1], B),),))
    return solve_composed(d, a, b, **kw)[1].value


def par_ot(A, B, a, b) -> float:
    """Sum of the two block transports; each block must balance on its own."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    m, n = A.shape
    k, l = B.shape
    a = as_marginal(a, m + k, "source marginal")
    b = as_marginal(b, n + l, "target marginal")
    for block, (sa, sb) in enumerate(((a[:m].sum(), b[:n].sum()), (a[m:].sum(), b[n:].sum())), 1):
        if abs(sa - sb) > BALANCE_TOL:
            raise EssentiallyUnbalancedError(block, float(sa), float(sb))
    v1 = solve_exact(A, a[:m], b[:n], allow_infinite=True).value
    v2 = solve_exact(B, a[m:], b[n:], allow_infinite=True).value
    return v1 + v2
