"""Small dense solvers: simplex LP, barrier QCQP, local polynomial solver, grid oracle."""

from .barrier import solve_convex_qcqp
from .grid import grid_oracle
from .linalg import is_psd, jacobi_eigh
from .local import certify_kkt, default_starts, solve_cpop_local
from .problems import (
    LpProblem,
    NotConvexError,
    QcqpProblem,
    Solution,
    Status,
    evaluate_residuals,
    write_trace_csv,
)
from .projection import project_polytope
from .simplex import solve_lp

__all__ = [
    "LpProblem",
    "NotConvexError",
    "QcqpProblem",
    "Solution",
    "Status",
    "certify_kkt",
    "default_starts",
    "evaluate_residuals",
    "grid_oracle",
    "is_psd",
    "jacobi_eigh",
    "project_polytope",
    "solve_convex_qcqp",
    "solve_cpop_local",
    "solve_lp",
    "write_trace_csv",
]
