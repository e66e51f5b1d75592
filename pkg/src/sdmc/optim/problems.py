"""Problem carriers and the shared solution record for the small dense solvers.

Every problem exposes the same minimal surface so that the local solver and
the grid oracle can treat LPs, QCQPs and polynomial programs uniformly:

``c``, ``A_eq``, ``b_eq``
    linear objective and equality block (``A_eq @ x == b_eq``), ``x >= 0``.
``constraint_values(x)``
    inequality values ``g(x)``, feasible when ``g(x) <= 0``.  Accepts a batch
    of points with shape ``(..., n)``.
``constraint_jacobian(x)``
    ``(m, n)`` Jacobian of ``g`` at a single point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE_LOCAL = "feasible-local"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max-iter"
    INFEASIBLE_FROM_STARTS = "infeasible-from-starts"
    INFEASIBLE_AT_RESOLUTION = "infeasible-at-resolution"


class NotConvexError(ValueError):
    """Raised when a quadratic constraint fails the PSD gate."""


def _as_matrix(a, n: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, n))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, n))
    return a


def _as_vector(b, m: int) -> np.ndarray:
    if b is None:
        return np.zeros(m)
    return np.asarray(b, dtype=float).reshape(-1)


@dataclass(frozen=True)
class LpProblem:
    """min c @ x  s.t.  A_eq x = b_eq,  A_in x <= b_in,  x >= 0."""

    c: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    b_in: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        A_eq = _as_matrix(self.A_eq, n)
        A_in = _as_matrix(self.A_in, n)
        b_eq = _as_vector(self.b_eq, A_eq.shape[0])
        b_in = _as_vector(self.b_in, A_in.shape[0])
        if A_eq.shape[1] != n or A_in.shape[1] != n:
            raise ValueError("constraint matrices must have one column per variable")
        if b_eq.size != A_eq.shape[0] or b_in.size != A_in.shape[0]:
            raise ValueError("right-hand sides do not match constraint rows")
        for name, arr in (("c", c), ("A_eq", A_eq), ("b_eq", b_eq), ("A_in", A_in), ("b_in", b_in)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_in", b_in)

    @property
    def n(self) -> int:
        return self.c.size

    def constraint_values(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A_in.T - self.b_in

    def constraint_jacobian(self, x):
        return self.A_in.copy()


@dataclass(frozen=True)
class QcqpProblem:
    """min c @ x  s.t.  A_eq x = b_eq,  x' Q_k x + q_k' x + r_k <= 0,  x >= 0.

    Quadratic matrices are symmetrized on construction.  The linear and
    constant terms default to zero, which is the homogeneous form produced by
    the two-rate stability constraints.
    """

    c: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    Q: np.ndarray = None
    q: np.ndarray = None
    r: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        A_eq = _as_matrix(self.A_eq, n)
        b_eq = _as_vector(self.b_eq, A_eq.shape[0])
        if self.Q is None:
            Q = np.zeros((0, n, n))
        else:
            Q = np.asarray(self.Q, dtype=float)
            if Q.ndim == 2:
                Q = Q[None]
        if Q.shape[1:] != (n, n):
            raise ValueError("each quadratic matrix must be n x n")
        Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))
        m = Q.shape[0]
        q = np.zeros((m, n)) if self.q is None else np.asarray(self.q, dtype=float).reshape(m, n)
        r = np.zeros(m) if self.r is None else np.asarray(self.r, dtype=float).reshape(m)
        if A_eq.shape[1] != n or b_eq.size != A_eq.shape[0]:
            raise ValueError("inconsistent equality block")
        for name, arr in (("c", c), ("A_eq", A_eq), ("b_eq", b_eq), ("Q", Q), ("q", q), ("r", r)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        for name, arr in (("c", c), ("A_eq", A_eq), ("b_eq", b_eq), ("Q", Q), ("q", q), ("r", r)):
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def homogeneous(self) -> np.ndarray:
        """Per-constraint flag: no linear and no constant term."""
        return np.all(self.q == 0.0, axis=1) & (self.r == 0.0)

    def constraint_values(self, x):
        x = np.asarray(x, dtype=float)
        quad = np.einsum("...i,kij,...j->...k", x, self.Q, x)
        return quad + x @ self.q.T + self.r

    def constraint_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * np.einsum("kij,j->ki", self.Q, x) + self.q


@dataclass
class Solution:
    x: np.ndarray
    objective: float
    status: Status
    residuals: dict = field(default_factory=dict)
    info: dict[str, Any] = field(default_factory=dict)
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.FEASIBLE_LOCAL)

    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)


def evaluate_residuals(problem, x) -> dict:
    """Recompute constraint residuals of ``x`` from the problem data alone."""
    x = np.asarray(x, dtype=float)
    eq = problem.A_eq @ x - problem.b_eq if problem.A_eq.shape[0] else np.zeros(0)
    g = np.atleast_1d(problem.constraint_values(x))
    return {
        "equality": float(np.max(np.abs(eq), initial=0.0)),
        "inequality": float(np.max(g, initial=0.0)) if g.size else 0.0,
        "nonnegativity": float(max(0.0, -np.min(x, initial=0.0))),
    }


def finish(problem, x, status: Status, *, eq_tol=1e-8, ineq_tol=1e-8, **extra) -> Solution:
    """Build a Solution with independently recomputed residuals.

    An ``optimal``/``feasible-local`` claim is downgraded to ``max-iter`` when
    the recomputed residuals exceed the tolerances.
    """
    x = np.asarray(x, dtype=float)
    res = evaluate_residuals(problem, x)
    if status in (Status.OPTIMAL, Status.FEASIBLE_LOCAL):
        if res["equality"] > eq_tol or res["inequality"] > ineq_tol or res["nonnegativity"] > eq_tol:
            extra.setdefault("info", {})["downgraded_from"] = status.value
            status = Status.MAX_ITER
    info = extra.pop("info", {})
    trace = extra.pop("trace", [])
    return Solution(x=x, objective=float(problem.c @ x), status=status, residuals=res, info=info, trace=trace)


def write_trace_csv(solution: Solution, path) -> None:
    """Dump a solver iteration trace as ``iter,objective,max_residual`` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,objective,max_residual\n")
        for it, obj, res in solution.trace:
            fh.write(f"{int(it)},{obj:.10g},{res:.10g}\n")
