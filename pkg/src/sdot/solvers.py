"""Monolithic OT solvers: an exact network simplex and log-domain Sinkhorn."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tropical import ShapeError, pairing

__all__ = [
    "OtSolution",
    "SolverError",
    "InfiniteCostError",
    "UnbalancedMarginalsError",
    "InfeasibleTransportError",
    "SinkhornConvergenceError",
    "NumericalUnderflowError",
    "as_marginal",
    "solve_exact",
    "solve_sinkhorn",
    "round_to_feasible",
    "dual_value",
    "dual_feasible",
    "plan_violation",
    "BALANCE_TOL",
    "DUAL_TOL",
]

BALANCE_TOL = 1e-9
DUAL_TOL = 1e-9


class SolverError(RuntimeError):
    pass


class InfiniteCostError(ValueError):
    pass


class UnbalancedMarginalsError(ValueError):
    pass


class InfeasibleTransportError(SolverError):
    pass


class SinkhornConvergenceError(SolverError):
    def __init__(self, violation: float, iterations: int):
        super().__init__(
            f"Sinkhorn did not reach the tolerance after {iterations} iterations "
            f"(marginal violation {violation:.3e})"
        )
        self.violation = violation
        self.iterations = iterations


class NumericalUnderflowError(SolverError):
    pass


@dataclass
class OtSolution:
    value: float
    plan: np.ndarray
    f: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    iterations: int = 0
    solver: str = "exact"
    marginal_error: float = 0.0
    epsilon: Optional[float] = None
    # Sinkhorn only: log-domain potentials of the entropic problem
    entropic_potentials: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    history: list[float] = field(default_factory=list, repr=False)


def as_marginal(w, size: Optional[int] = None, name: str = "marginal") -> np.ndarray:
    """Validate a weight vector: 1-d, finite, nonnegative, of the given size."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ShapeError(f"{name} must be a vector")
    if size is not None and w.shape[0] != size:
        raise ShapeError(f"{name} has length {w.shape[0]}, expected {size}")
    if not np.isfinite(w).all():
        raise ValueError(f"{name} has non-finite entries")
    if (w < 0).any():
        raise ValueError(f"{name} has negative entries")
    return w


def _check_problem(C, a, b):
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ShapeError("cost matrix must be 2-d")
    m, n = C.shape
    a = as_marginal(a, m, "source marginal")
    b = as_marginal(b, n, "target marginal")
    if abs(a.sum() - b.sum()) > BALANCE_TOL:
        raise UnbalancedMarginalsError(f"marginal masses differ: {a.sum()!r} vs {b.sum()!r}")
    return C, a, b


def plan_violation(P, a, b) -> float:
    """L1 distance of the plan's row and column sums from ``a`` and ``b``."""
    P = np.asarray(P)
    return float(np.abs(P.sum(axis=1) - a).sum() + np.abs(P.sum(axis=0) - b).sum())


# -- network simplex ---------------------------------------------------------

class _Lex:
    """Comparisons on flows ``x + e * eps`` for an infinitesimal ``eps``."""

    def __init__(self, xtol: float):
        self.xtol = xtol

    def lt(self, x1, e1, x2, e2) -> bool:
        if abs(x1 - x2) > self.xtol:
            return x1 < x2
        return e1 < e2


def _northwest_corner(a, b, lex: _Lex):
    # supplies a_i + eps, demands b_j, last demand b_n + m*eps: no degenerate basis
    m, n = len(a), len(b)
    sx, se = a.astype(float).copy(), np.ones(m, dtype=np.int64)
    dx, de = b.astype(float).copy(), np.zeros(n, dtype=np.int64)
    de[-1] = m
    arcs, xs, es = [], [], []
    i = j = 0
    for _ in range(m + n - 1):
        if i == m - 1 and j == n - 1:
            take_x, take_e = sx[i], se[i]
            step = (0, 0)
        elif i == m - 1:
            take_x, take_e, step = dx[j], de[j], (0, 1)
        elif j == n - 1:
            take_x, take_e, step = sx[i], se[i], (1, 0)
        elif lex.lt(sx[i], se[i], dx[j], de[j]):
            take_x, take_e, step = sx[i], se[i], (1, 0)
        else:
            take_x, take_e, step = dx[j], de[j], (0, 1)
        arcs.append((i, j))
        xs.append(take_x)
        es.append(int(take_e))
        sx[i] -= take_x
        se[i] -= take_e
        dx[j] -= take_x
        de[j] -= take_e
        i += step[0]
        j += step[1]
    return arcs, xs, es


def _network_simplex(C, a, b, pivot_rule: str, max_iter: int):
    m, n = C.shape
    N = m + n
    mass = max(float(a.sum()), 1e-300)
    lex = _Lex(1e-13 * max(mass, 1.0))
    arcs, xs, es = _northwest_corner(a, b, lex)
    K = len(arcs)
    arc_i = np.array([ij[0] for ij in arcs], dtype=np.int64)
    arc_j = np.array([ij[1] for ij in arcs], dtype=np.int64)
    flow_x = np.array(xs, dtype=np.float64)
    flow_e = np.array(es, dtype=np.int64)
    adj: list[set[int]] = [set() for _ in range(N)]
    for k in range(K):
        adj[arc_i[k]].add(k)
        adj[m + arc_j[k]].add(k)

    scale = float(np.abs(C).max()) if C.size else 1.0
    rtol = 1e-12 * max(scale, 1.0)
    u = np.zeros(m)
    v = np.zeros(n)
    parent = np.full(N, -1, dtype=np.int64)
    parent_arc = np.full(N, -1, dtype=np.int64)
    depth = np.zeros(N, dtype=np.int64)

    def hang(start, from_node, from_arc):
        """Breadth-first walk of the subtree entered at ``start`` through
        ``from_arc``, setting parents, depths and potentials on the way."""
        parent[start] = from_node
        parent_arc[start] = from_arc
        depth[start] = depth[from_node] + 1 if from_node >= 0 else 0
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for k in adj[node]:
                if k == parent_arc[node]:
                    continue
                other = m + arc_j[k] if node < m else arc_i[k]
                parent[other] = node
                parent_arc[other] = k
                depth[other] = depth[node] + 1
                cij = C[arc_i[k], arc_j[k]]
                if node < m:
                    v[other - m] = cij - u[node]
                else:
                    u[other] = cij - v[node - m]
                queue.append(other)

    u[0] = 0.0
    hang(0, -1, -1)
    it = 0
    while True:
        R = C - u[:, None] - v[None, :]
        if pivot_rule == "bland":
            cand = np.flatnonzero(R.ravel() < -rtol)
            if cand.size == 0:
                break
            flat = int(cand[0])
        else:
            flat = int(np.argmin(R))
            if R.flat[flat] >= -rtol:
                break
        if it >= max_iter:
            raise SolverError(f"network simplex exceeded {max_iter} pivots")
        it += 1
        ei, ej = divmod(flat, n)
        # tree path between row node ei and column node m + ej
        x, y = ei, m + ej
        up_x, up_y = [], []
        while x != y:
            if depth[x] >= depth[y]:
                up_x.append(parent_arc[x])
                x = parent[x]
            else:
                up_y.append(parent_arc[y])
                y = parent[y]
        path = up_y + up_x[::-1]  # from the column node back to the row node
        minus = path[0::2]
        plus = path[1::2]
        leave = minus[0]
        for k in minus[1:]:
            if lex.lt(flow_x[k], flow_e[k], flow_x[leave], flow_e[leave]) or (
                not lex.lt(flow_x[leave], flow_e[leave], flow_x[k], flow_e[k]) and k < leave
            ):
                leave = k
        tx, te = flow_x[leave], flow_e[leave]
        for k in plus:
            flow_x[k] += tx
            flow_e[k] += te
        for k in minus:
            flow_x[k] -= tx
            flow_e[k] -= te
        # the leaving arc cuts off the subtree below its deeper end; the
        # entering arc hangs that subtree back on through whichever of its
        # endpoints lies inside it
        li, lj = arc_i[leave], m + arc_j[leave]
        cut = li if parent_arc[li] == leave else lj
        node = ei
        while depth[node] > depth[cut]:
            node = parent[node]
        if node == cut:
            inside, outside = ei, m + ej
        else:
            inside, outside = m + ej, ei
        adj[li].discard(leave)
        adj[lj].discard(leave)
        arc_i[leave], arc_j[leave] = ei, ej
        flow_x[leave], flow_e[leave] = tx, te
        adj[ei].add(leave)
        adj[m + ej].add(leave)
        if inside < m:
            u[inside] = C[ei, ej] - v[outside - m]
        else:
            v[inside - m] = C[ei, ej] - u[outside]
        hang(inside, outside, leave)
        small = np.abs(flow_x) <= lex.xtol
        flow_x[small] = 0.0

    plan = np.zeros((m, n))
    np.add.at(plan, (arc_i, arc_j), np.maximum(flow_x, 0.0))
    return plan, u.copy(), v.copy(), it


def solve_exact(
    C,
    a,
    b,
    *,
    pivot_rule: str = "dantzig",
    max_iter: Optional[int] = None,
    allow_infinite: bool = False,
) -> OtSolution:
    """Solve the transportation LP exactly with a network simplex.

    Degenerate bases are avoided by a lexicographic perturbation of the
    marginals, so no pivot stalls and the method terminates under either
    pivot rule (``"dantzig"``: most negative reduced cost, ``"bland"``:
    first negative in row-major order).  The dual potentials come from the
    final spanning tree and are tightened by a c-transform, so ``f_i + g_j <=
    C_ij`` holds to rounding.

    With ``allow_infinite`` the infinite entries are replaced by a large
    finite penalty and the plan is checked to carry no mass there.
    """
    C, a, b = _check_problem(C, a, b)
    if pivot_rule not in ("dantzig", "bland"):
        raise ValueError(f"unknown pivot rule {pivot_rule!r}")
    m, n = C.shape
    if max_iter is None:
        max_iter = 50 * m * n + 1000
    inf_mask = np.isinf(C)
    if inf_mask.any() and not allow_infinite:
        idx = [tuple(int(t) for t in ij) for ij in np.argwhere(inf_mask)[:5]]
        raise InfiniteCostError(f"cost matrix has infinite entries, e.g. at {idx}")

    if not inf_mask.any():
        plan, f, g, it = _network_simplex(C, a, b, pivot_rule, max_iter)
    else:
        finite = C[~inf_mask]
        if finite.size == 0:
            raise InfeasibleTransportError("every entry of the cost matrix is infinite")
        big = (float(finite.max() - finite.min()) + 1.0) * (m + n) * 10.0 + abs(float(finite.max()))
        for _ in range(6):
            Cb = np.where(inf_mask, big, C)
            plan, f, g, it = _network_simplex(Cb, a, b, pivot_rule, max_iter)
            if plan[inf_mask].sum() <= 1e-12 * max(1.0, a.sum()):
                plan[inf_mask] = 0.0
                break
            big *= 1e3
        else:
            raise InfeasibleTransportError("no plan avoids the infinite entries")

    # c-transform: g_j = min_i C_ij - f_i keeps optimality and makes (f, g) feasible
    with np.errstate(invalid="ignore"):
        g = np.min(np.where(inf_mask, np.inf, C - f[:, None]), axis=0)
    value = pairing(C, plan)
    return OtSolution(
        value=value,
        plan=plan,
        f=f,
        g=g,
        iterations=it,
        solver="exact",
        marginal_error=plan_violation(plan, a, b),
    )


# -- Sinkhorn ---------------------------------------------------------------

def _lse(X: np.ndarray, axis: int) -> np.ndarray:
    mx = X.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    out = np.log(np.exp(X - mx).sum(axis=axis, keepdims=True)) + mx
    return np.squeeze(out, axis=axis)


def _sinkhorn_log(C, a, b, eps, tol, max_iter, f, g, history):
    # Log-stabilized iterations: an exact log-sum-exp step absorbs the scalings
    # into (f, g), then cheap matrix-vector scalings run on the kernel
    # exp((f + g - C) / eps) until a scaling leaves a safe range.
    loga, logb = np.log(a), np.log(b)
    viol = math.inf
    it = 0
    tiny = 1e-280
    while it < max_iter:
        g = eps * (logb - _lse((f[:, None] - C) / eps, axis=0))
        L = _lse((g[None, :] - C) / eps, axis=1)
        viol = float(np.abs(np.exp(f / eps + L) - a).sum())
        it += 1
        if history is not None:
            history.append(viol)
        if viol <= tol:
            return f, g, it, viol
        f = eps * (loga - L)
        K = np.exp((f[:, None] + g[None, :] - C) / eps)
        u = np.ones(len(a))
        v = np.ones(len(b))
        while it < max_iter:
            Ktu = K.T @ u
            if not (Ktu > tiny).all():
                break
            v = b / Ktu
            Kv = K @ v
            if not (Kv > tiny).all():
                break
            viol = float(np.abs(u * Kv - a).sum())
            it += 1
            if history is not None:
                history.append(viol)
            if viol <= tol:
                return f + eps * np.log(u), g + eps * np.log(v), it, viol
            u = a / Kv
            if np.abs(np.log(u)).max() > 100 or np.abs(np.log(v)).max() > 100:
                break
        f = f + eps * np.log(u)
        g = g + eps * np.log(v)
    return f, g, it, viol


def _sinkhorn_scaling(C, a, b, eps, tol, max_iter, history):
    K = np.exp(-C / eps)
    if (K.sum(axis=1) == 0).any() or (K.sum(axis=0) == 0).any():
        raise NumericalUnderflowError(
            f"exp(-C/eps) underflows to zero for eps={eps:g}; use the log-domain mode"
        )
    u = np.ones(len(a))
    v = np.ones(len(b))
    viol = math.inf
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            Ktu = K.T @ u
            v = b / Ktu
            Kv = K @ v
            if not (np.isfinite(v).all() and np.isfinite(Kv).all()) or (Kv == 0).any():
                raise NumericalUnderflowError(f"scaling vectors left the float range at iteration {it}")
            viol = float(np.abs(u * Kv - a).sum())
            if history is not None:
                history.append(viol)
            if viol <= tol:
                break
            u = a / Kv
    P = u[:, None] * K * v[None, :]
    return P, it, viol


def solve_sinkhorn(
    C,
    a,
    b,
    epsilon: Optional[float] = None,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    *,
    log_domain: bool = True,
    anneal: bool = False,
    epsilon_start: Optional[float] = None,
    drop_zeros: bool = True,
    round_plan: bool = False,
    record_history: bool = False,
) -> OtSolution:
    """Entropic OT by Sinkhorn iterations.

    ``epsilon`` defaults to ``1e-3 * max(C)``.  With ``anneal`` the
    regularization starts at ``epsilon_start`` (default ``max(C) / 10``) and is
    halved, warm-starting each stage, until it reaches ``epsilon``.  Rows and
    columns with zero mass are removed from the scaling and stay zero in the
    plan.  The reported value is ``<C, P>`` of the unrounded plan unless
    ``round_plan`` is set.
    """
    C, a, b = _check_problem(C, a, b)
    if np.isinf(C).any():
        raise InfiniteCostError("Sinkhorn needs a finite cost matrix")
    if (C < 0).any():
        raise ValueError("Sinkhorn needs a nonnegative cost matrix")
    m, n = C.shape
    rows = a > 0
    cols = b > 0
    if not (rows.all() and cols.all()) and not drop_zeros:
        raise ValueError("marginals contain zeros; enable drop_zeros")
    Cs = C[np.ix_(rows, cols)]
    a_s, b_s = a[rows], b[cols]
    cmax = float(Cs.max()) if Cs.size else 0.0
    if epsilon is None:
        epsilon = 1e-3 * cmax if cmax > 0 else 1e-3
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    schedule = [epsilon]
    if anneal:
        e = epsilon_start if epsilon_start is not None else max(cmax / 10.0, epsilon)
        schedule = []
        while e > epsilon:
            schedule.append(e)
            e /= 2.0
        schedule.append(epsilon)

    history: Optional[list[float]] = [] if record_history else None
    total_it = 0
    if log_domain:
        f = np.zeros(len(a_s))
        g = np.zeros(len(b_s))
        for k, eps in enumerate(schedule):
            last = k == len(schedule) - 1
            stage_tol = tol if last else max(tol, 1e-6 * float(a_s.sum()))
            f, g, it, viol = _sinkhorn_log(Cs, a_s, b_s, eps, stage_tol, max_iter, f, g,
                                           history if last else None)
            total_it += it
            if viol > stage_tol and last:
                raise SinkhornConvergenceError(viol, it)
        Ps = np.exp((f[:, None] + g[None, :] - Cs) / epsilon)
        potentials = (np.zeros(m), np.zeros(n))
        potentials[0][rows] = f
        potentials[1][cols] = g
    else:
        for k, eps in enumerate(schedule):
            last = k == len(schedule) - 1
            stage_tol = tol if last else max(tol, 1e-6 * float(a_s.sum()))
            Ps, it, viol = _sinkhorn_scaling(Cs, a_s, b_s, eps, stage_tol, max_iter,
                                             history if last else None)
            total_it += it
            if viol > stage_tol and last:
                raise SinkhornConvergenceError(viol, it)
        potentials = None

    P = np.zeros((m, n))
    P[np.ix_(rows, cols)] = Ps
    if round_plan:
        P = round_to_feasible(P, a, b)
    return OtSolution(
        value=pairing(C, P),
        plan=P,
        iterations=total_it,
        solver="sinkhorn",
        marginal_error=plan_violation(P, a, b),
        epsilon=epsilon,
        entropic_potentials=potentials,
        history=history or [],
    )


def round_to_feasible(P, a, b) -> np.ndarray:
    """Project a near-feasible plan onto the transport polytope (row/column
    clipping followed by a rank-one correction)."""
    P = np.array(P, dtype=np.float64)
    r = P.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(r > 0, np.minimum(a / r, 1.0), 0.0)
    P *= x[:, None]
    c = P.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(c > 0, np.minimum(b / c, 1.0), 0.0)
    P *= y[None, :]
    err_r = a - P.sum(axis=1)
    err_c = b - P.sum(axis=0)
    s = np.abs(err_r).sum()
    if s > 0:
        P += np.outer(err_r, err_c) / s
    return np.maximum(P, 0.0)


# -- duality -----------------------------------------------------------------

def dual_value(f, g, a, b) -> float:
    """``sum_i f_i a_i + sum_j g_j b_j``."""
    f, g = np.asarray(f, dtype=np.float64), np.asarray(g, dtype=np.float64)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if f.shape != a.shape or g.shape != b.shape:
        raise ShapeError(f"length mismatch: f{f.shape}/a{a.shape}, g{g.shape}/b{b.shape}")
    return float(f @ a + g @ b)


def dual_feasible(C, f, g, tol: float = DUAL_TOL) -> tuple[bool, float]:
    """Check ``f_i + g_j <= C_ij`` on every finite entry.

    Returns ``(ok, worst)`` where ``worst`` is ``max_ij f_i + g_j - C_ij``
    (``-inf`` if every entry is infinite).
    """
    C = np.asarray(C, dtype=np.float64)
    f, g = np.asarray(f, dtype=np.float64), np.asarray(g, dtype=np.float64)
    if C.shape != (f.shape[0], g.shape[0]):
        raise ShapeError(f"potentials {f.shape[0]}, {g.shape[0]} do not match cost {C.shape}")
    finite = np.isfinite(C)
    if not finite.any():
        return True, -math.inf
    slack = (f[:, None] + g[None, :]) - C
    worst = float(slack[finite].max())
    return worst <= tol, worst
