"""Optimal transport over string diagrams of open transport problems.

Cost matrices compose over the min-plus semiring; the composed matrix is then
solved exactly (network simplex) or approximately (Sinkhorn), or the whole
hierarchical LP is solved directly.
"""

__version__ = "0.1.0"

from .tropical import (  # noqa: E402
    INF,
    ExtReal,
    ShapeError,
    cost_matrix,
    identity_cost,
    pairing,
    par_compose,
    seq_compose,
)
from .diagram import (  # noqa: E402
    AlignedDiagram,
    Id,
    Leaf,
    Par,
    Seq,
    parse_diagram,
    pretty,
    to_sequential_normal_form,
    type_check,
    validate_aligned,
)
from .compose import assert_finite, compose_cost  # noqa: E402
from .solvers import OtSolution, dual_feasible, dual_value, solve_exact, solve_sinkhorn  # noqa: E402
from .composed_lp import build_sdot_lp, par_ot, seq_ot, solve_dense_lp  # noqa: E402
from .safety import Decision, SafetyVerdict, check_safety, verify_certificate, witness_cost  # noqa: E402
from .bench import generate, preset, scale  # noqa: E402
from .experiment import run_experiment, sweep  # noqa: E402
