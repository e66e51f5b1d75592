"""Dense two-phase tableau simplex with Bland's anti-cycling rule."""

from __future__ import annotations

import numpy as np

from .problems import LpProblem, Solution, Status, finish

PIVOT_TOL = 1e-10
OPT_TOL = 1e-10


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])


def _bland_enter(cost_row: np.ndarray, allowed: int) -> int:
    for j in range(allowed):
        if cost_row[j] < -OPT_TOL:
            return j
    return -1


def _bland_leave(T: np.ndarray, col: int, basis: list[int], m: int) -> int:
    best, best_ratio, best_var = -1, np.inf, None
    for i in range(m):
        a = T[i, col]
        if a > PIVOT_TOL:
            ratio = T[i, -1] / a
            if ratio < best_ratio - 1e-15 or (abs(ratio - best_ratio) <= 1e-15 and basis[i] < best_var):
                best, best_ratio, best_var = i, ratio, basis[i]
    return best


def _iterate(T, basis, m, allowed, max_iter, trace, it0, obj_sign=1.0):
    """Run simplex pivots on tableau ``T`` (last row = reduced costs)."""
    it = it0
    while it < max_iter:
        j = _bland_enter(T[m, :allowed], allowed)
        if j < 0:
            return "optimal", it
        i = _bland_leave(T, j, basis, m)
        if i < 0:
            return "unbounded", it
        _pivot(T, i, j)
        basis[i] = j
        it += 1
        if trace is not None:
            trace.append((it, obj_sign * -T[m, -1], 0.0))
    return "max-iter", it


def solve_lp(problem: LpProblem, *, max_iter: int = 20_000, trace: bool = False) -> Solution:
    """Solve ``problem`` to a vertex optimum.

    Returns a :class:`Solution` whose status is one of optimal, infeasible,
    unbounded or max-iter.  For infeasible problems ``info["violated_rows"]``
    lists the constraint rows (equalities first, then inequalities) that the
    phase-1 problem could not satisfy.
    """
    n = problem.n
    m_eq, m_in = problem.A_eq.shape[0], problem.A_in.shape[0]
    m = m_eq + m_in
    N = n + m_in
    A = np.zeros((m, N))
    A[:m_eq, :n] = problem.A_eq
    A[m_eq:, :n] = problem.A_in
    A[m_eq:, n:] = np.eye(m_in)
    b = np.concatenate([problem.b_eq, problem.b_in])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    cost = np.concatenate([problem.c, np.zeros(m_in)])
    tr = [] if trace else None

    if m == 0:
        if np.any(problem.c < -OPT_TOL):
            return finish(problem, np.zeros(n), Status.UNBOUNDED)
        return finish(problem, np.zeros(n), Status.OPTIMAL)

    # phase 1: artificial identity on every row
    T = np.zeros((m + 1, N + m + 1))
    T[:m, :N] = A
    T[:m, N:N + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :N] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(N, N + m))
    state, it = _iterate(T, basis, m, N, max_iter, tr, 0)
    if state == "max-iter":
        return finish(problem, np.zeros(n), Status.MAX_ITER, trace=tr or [])
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    if -T[m, -1] > 1e-9 * scale:
        art = np.zeros(m)
        for i, var in enumerate(basis):
            if var >= N:
                art[var - N] = T[i, -1]
        x = np.zeros(N)
        for i, var in enumerate(basis):
            if var < N:
                x[var] = T[i, -1]
        rows = [int(k) for k in np.flatnonzero(art > 1e-9 * scale)]
        return finish(problem, x[:n], Status.INFEASIBLE,
                      info={"violated_rows": rows, "phase1_value": float(-T[m, -1])},
                      trace=tr or [])

    # drive artificials out of the basis; drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= N:
            cand = [j for j in range(N) if abs(T[i, j]) > PIVOT_TOL]
            if cand:
                _pivot(T, i, cand[0])
                basis[i] = cand[0]
                keep.append(i)
        else:
            keep.append(i)
    redundant = [i for i in range(m) if i not in keep]
    T = np.vstack([T[keep][:, list(range(N)) + [T.shape[1] - 1]], np.zeros((1, N + 1))])
    basis = [basis[i] for i in keep]
    m2 = len(keep)

    # phase 2
    T[m2, :N] = cost
    T[m2, -1] = 0.0
    for i, var in enumerate(basis):
        if T[m2, var] != 0.0:
            T[m2] -= T[m2, var] * T[i]
    state, it = _iterate(T, basis, m2, N, max_iter, tr, it)
    x = np.zeros(N)
    for i, var in enumerate(basis):
        x[var] = T[i, -1]
    if state == "optimal" and m2:
        # refine basic values against the original data
        rows = np.array(keep)
        B = A[rows][:, basis]
        try:
            xb = np.linalg.solve(B, b[rows])
            if np.all(xb > -1e-9):
                x[:] = 0.0
                x[basis] = np.maximum(xb, 0.0)
        except np.linalg.LinAlgError:
            pass
    status = {"optimal": Status.OPTIMAL, "unbounded": Status.UNBOUNDED, "max-iter": Status.MAX_ITER}[state]
    info = {"iterations": it, "basis": list(basis), "redundant_rows": redundant}
    return finish(problem, x[:n], status, info=info, trace=tr or [])
