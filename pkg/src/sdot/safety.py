"""Threshold queries ``lambda <= OT(D, a, b)`` with independently checkable evidence.

A Safe answer carries dual potentials ``(f, g)``: by weak duality any
feasible pair with ``f.a + g.b >= lambda`` proves the bound.  An Unsafe
answer carries a feasible plan whose cost is below ``lambda``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .compose import compose_cost
from .composed_lp import build_sdot_lp, glue_plans, leaf_plans, solve_dense_lp, split_duals
from .diagram import AlignedDiagram, to_sequential_normal_form, validate_aligned
from .solvers import (
    as_marginal,
    dual_feasible,
    dual_value,
    round_to_feasible,
    solve_exact,
    solve_sinkhorn,
)
from .tropical import ShapeError, pairing

__all__ = [
    "Decision",
    "SafetyVerdict",
    "InfeasiblePlanError",
    "check_safety",
    "verify_certificate",
    "witness_cost",
    "SAFETY_TOL",
    "SOLVERS",
]

SAFETY_TOL = 1e-9
PLAN_TOL = 1e-9
SOLVERS = ("exact", "composed-lp", "sinkhorn")


class Decision(enum.Enum):
    SAFE = "Safe"
    UNSAFE = "Unsafe"

    def __str__(self) -> str:
        return self.value


class InfeasiblePlanError(ValueError):
    pass


@dataclass
class SafetyVerdict:
    decision: Decision
    threshold: float
    ot_value: float
    solver: str
    certified: bool
    near_boundary: bool = False
    certificate: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    witness: Optional[np.ndarray] = field(default=None, repr=False)
    witness_cost: Optional[float] = None
    # f.a + g.b of the certificate
    dual_bound: Optional[float] = None

    @property
    def safe(self) -> bool:
        return self.decision is Decision.SAFE

    def to_record(self) -> dict:
        rec = {
            "decision": str(self.decision),
            "lambda": self.threshold,
            "value": self.ot_value,
            "solver": self.solver,
            "certified": self.certified,
            "near_boundary": self.near_boundary,
        }
        if self.dual_bound is not None:
            rec["dual_value"] = self.dual_bound
        if self.witness_cost is not None:
            rec["witness_cost"] = self.witness_cost
        return {k: v for k, v in rec.items() if v is not None}


def verify_certificate(C, cert, a, b, lam: float) -> bool:
    """True iff ``cert = (f, g)`` is dual feasible for ``C`` and its value reaches ``lam``.

    Uses nothing from the solver that produced ``cert``.
    """
    f, g = cert
    C = np.asarray(C, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if C.shape != (f.shape[0], g.shape[0]) or f.shape != np.shape(a) or g.shape != np.shape(b):
        raise ShapeError("certificate shapes do not match the instance")
    if not (np.isfinite(f).all() and np.isfinite(g).all()):
        return False
    ok, _ = dual_feasible(C, f, g, SAFETY_TOL)
    return bool(ok and dual_value(f, g, a, b) >= lam - SAFETY_TOL)


def _as_cost(d) -> np.ndarray:
    if isinstance(d, np.ndarray):
        return d
    return compose_cost(d)


def witness_cost(d, a, b, plan) -> float:
    """``<C^D, plan>`` after checking that ``plan`` transports ``a`` onto ``b``."""
    C = _as_cost(d)
    P = np.asarray(plan, dtype=np.float64)
    if P.shape != C.shape:
        raise ShapeError(f"plan shape {P.shape} does not match cost {C.shape}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if (P < 0).any():
        raise InfeasiblePlanError("plan has negative entries")
    dr = np.abs(P.sum(axis=1) - a).max(initial=0.0)
    dc = np.abs(P.sum(axis=0) - b).max(initial=0.0)
    if max(dr, dc) > PLAN_TOL:
        raise InfeasiblePlanError(f"plan misses the marginals by {max(dr, dc):.3e}")
    return pairing(C, P)


def _normalize(d) -> AlignedDiagram:
    ad = d if isinstance(d, AlignedDiagram) else to_sequential_normal_form(d)
    validate_aligned(ad).raise_if_failed()
    return ad


def _verdict(lam, value, solver, **kw) -> SafetyVerdict:
    safe = lam <= value + SAFETY_TOL
    near = abs(lam - value) <= SAFETY_TOL * max(1.0, abs(value)) * 1e3
    return SafetyVerdict(
        decision=Decision.SAFE if safe else Decision.UNSAFE,
        threshold=lam,
        ot_value=value,
        solver=solver,
        certified=False,
        near_boundary=near,
        **kw,
    )


def check_safety(
    d: Union[AlignedDiagram, object],
    a,
    b,
    lam: float,
    solver: str = "exact",
    **solver_kw,
) -> SafetyVerdict:
    """Decide whether ``lam`` is at most the OT value of diagram ``d``.

    ``solver`` is ``"exact"`` (network simplex on the composed matrix),
    ``"composed-lp"`` (hierarchical LP; its leaf plans are glued into one
    witness plan) or ``"sinkhorn"`` (evidence only when the entropic bounds
    decide the query).
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError("threshold must be a nonnegative real")
    ad = _normalize(d)
    a = as_marginal(a, ad.source_size, "source marginal")
    b = as_marginal(b, ad.target_size, "target marginal")
    C = compose_cost(ad)
    finite = C[np.isfinite(C)]
    nonneg = finite.size > 0 and bool((finite >= 0).all())

    if solver == "exact":
        sol = solve_exact(C, a, b, allow_infinite=True, **solver_kw)
        v = _verdict(lam, sol.value, solver)
        if v.safe:
            if lam <= 0 and nonneg:
                v.certificate = (np.zeros(len(a)), np.zeros(len(b)))
            else:
                v.certificate = (sol.f, sol.g)
            v.dual_bound = dual_value(*v.certificate, a, b)
            v.certified = verify_certificate(C, v.certificate, a, b, lam)
        else:
            v.witness = sol.plan
            v.witness_cost = witness_cost(C, a, b, sol.plan)
            v.certified = v.witness_cost < lam
        return v

    if solver == "composed-lp":
        p = build_sdot_lp(ad, a, b)
        lp = solve_dense_lp(p, **solver_kw)
        v = _verdict(lam, lp.value, solver)
        if v.safe:
            v.certificate = split_duals(p, lp.y)
            if lam <= 0 and nonneg:
                v.certificate = (np.zeros(len(a)), np.zeros(len(b)))
            v.dual_bound = dual_value(*v.certificate, a, b)
            v.certified = verify_certificate(C, v.certificate, a, b, lam)
        else:
            # glued leaf plans give a plan on the composed matrix costing no
            # more than the LP optimum
            P = glue_plans(leaf_plans(ad, p, lp.x))
            v.witness = P
            try:
                v.witness_cost = witness_cost(C, a, b, P)
                v.certified = v.witness_cost < lam
            except InfeasiblePlanError:
                v.certified = False
        return v

    # sinkhorn: bracket the value between a c-transformed dual bound and a
    # rounded feasible plan
    sol = solve_sinkhorn(C, a, b, **solver_kw)
    fe, _ = sol.entropic_potentials
    with np.errstate(invalid="ignore"):
        g = np.min(C - fe[:, None], axis=0)
    lower = dual_value(fe, g, a, b)
    P = round_to_feasible(sol.plan, a, b)
    upper = pairing(C, P)
    v = _verdict(lam, sol.value, solver)
    if lam <= lower + SAFETY_TOL:
        v.decision = Decision.SAFE
        v.certificate = (fe, g)
        if lam <= 0 and nonneg:
            v.certificate = (np.zeros(len(a)), np.zeros(len(b)))
        v.dual_bound = dual_value(*v.certificate, a, b)
        v.certified = verify_certificate(C, v.certificate, a, b, lam)
    elif upper < lam:
        v.decision = Decision.UNSAFE
        v.witness = P
        try:
            v.witness_cost = witness_cost(C, a, b, P)
            v.certified = v.witness_cost < lam
        except InfeasiblePlanError:
            v.certified = False
    return v
