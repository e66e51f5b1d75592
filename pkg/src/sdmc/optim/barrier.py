"""Log-barrier interior-point method for convex QCQPs behind a PSD gate.

A homogeneous constraint ``x' Q x <= 0`` with ``Q`` positive semidefinite
holds exactly on the null space of ``Q``, so it is replaced by the linear
equalities ``v' x = 0`` for every eigenvector ``v`` with a positive
eigenvalue.  The remaining (strictly feasible) quadratic constraints and the
sign constraints are handled by the barrier.

Defaults: initial barrier weight 1, weight multiplied by 0.2 after each
centering, Newton steps with backtracking (Armijo 1e-4, shrink 0.5).
"""

from __future__ import annotations

import numpy as np

from .linalg import is_psd, jacobi_eigh
from .problems import LpProblem, NotConvexError, QcqpProblem, Solution, Status, finish
from .simplex import solve_lp

ARMIJO = 1e-4
SHRINK = 0.5
MU0 = 1.0
MU_FACTOR = 0.2
GAP_TOL = 1e-9


def _row_basis(A, b, tol=1e-11):
    """Orthonormal equivalent of A x = b; raises on inconsistency."""
    if A.shape[0] == 0:
        return A, b
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > tol * max(1.0, s.max(initial=0.0))
    bb = U.T @ b
    if np.any(np.abs(bb[~keep]) > 1e-9):
        raise ValueError("inconsistent equalities")
    return Vt[keep], bb[keep] / s[keep]


def _gate(problem: QcqpProblem, tol: float):
    extra_rows = []
    nonhom = []
    for k in range(problem.Q.shape[0]):
        Q = problem.Q[k]
        if not is_psd(Q, tol):
            raise NotConvexError(
                f"quadratic constraint {k} is not PSD; use solve_cpop_local for the nonconvex program"
            )
        if problem.homogeneous[k]:
            w, v = jacobi_eigh(Q)
            scale = max(1.0, np.abs(w).max(initial=0.0))
            for j in np.flatnonzero(w > tol * scale):
                extra_rows.append(v[:, j])
        else:
            nonhom.append(k)
    return extra_rows, nonhom


class _Barrier:
    def __init__(self, c, A, b, Qs, qs, rs):
        self.c, self.A, self.b = c, A, b
        self.Qs, self.qs, self.rs = Qs, qs, rs

    def g(self, x):
        return np.array([x @ Q @ x + q @ x + r for Q, q, r in zip(self.Qs, self.qs, self.rs)])

    def inside(self, x, extra_s=None):
        if np.any(x <= 0):
            return False
        g = self.g(x)
        if extra_s is not None:
            g = g - extra_s
        return bool(np.all(g < 0))

    def value(self, x, mu, t_obj=None):
        g = self.g(x)
        return float(self.c @ x - mu * (np.sum(np.log(x)) + np.sum(np.log(-g))))

    def newton(self, x, mu):
        g = self.g(x)
        grad = self.c - mu / x
        H = np.diag(mu / x ** 2)
        for k, (Q, q) in enumerate(zip(self.Qs, self.qs)):
            dg = 2.0 * Q @ x + q
            grad = grad + mu * dg / (-g[k])
            H = H + mu * (np.outer(dg, dg) / g[k] ** 2 + 2.0 * Q / (-g[k]))
        m = self.A.shape[0]
        n = x.size
        K = np.zeros((n + m, n + m))
        K[:n, :n] = H
        K[:n, n:] = self.A.T
        K[n:, :n] = self.A
        rhs = np.concatenate([-grad, np.zeros(m)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        dx = sol[:n]
        return dx, float(-grad @ dx)


def _center(bar: _Barrier, x, mu, *, max_newton=100, feasible=None):
    feasible = feasible or bar.inside
    for _ in range(max_newton):
        dx, dec = bar.newton(x, mu)
        if dec / 2.0 <= 1e-12:
            break
        f0 = bar.value(x, mu)
        slope = -dec
        t = 1.0
        while t > 1e-20:
            xn = x + t * dx
            if feasible(xn) and bar.value(xn, mu) <= f0 + ARMIJO * t * slope:
                break
            t *= SHRINK
        else:
            break
        x = xn
    return x


def _barrier_solve(bar: _Barrier, x, *, trace=None, stop=None, it0=0):
    mu = MU0
    m_ineq = x.size + len(bar.Qs)
    it = it0
    while True:
        x = _center(bar, x, mu)
        it += 1
        if trace is not None:
            trace.append((it, float(bar.c @ x), float(max(0.0, np.max(bar.g(x), initial=0.0)))))
        if stop is not None and stop(x):
            break
        if mu * m_ineq <= GAP_TOL:
            break
        mu *= MU_FACTOR
    return x, it


def _relative_interior(A, b, n):
    """Point in the relative interior of {A x = b, x >= 0} plus forced-zero mask."""
    points = []
    forced = np.zeros(n, dtype=bool)
    for i in range(n):
        c = np.zeros(n)
        c[i] = -1.0
        sol = solve_lp(LpProblem(c=c, A_eq=A, b_eq=b))
        if sol.status == Status.INFEASIBLE:
            return None, None
        if sol.status == Status.UNBOUNDED:
            # any feasible point with x_i positive; step along the ray is not
            # available from the tableau, so fall back to a bounded version
            sol = solve_lp(LpProblem(c=c, A_eq=A, b_eq=b, A_in=np.eye(n)[i:i + 1], b_in=[1.0]))
        if sol.status != Status.OPTIMAL:
            return None, None
        if sol.x[i] <= 1e-12:
            forced[i] = True
        points.append(sol.x)
    x = np.mean(points, axis=0)
    x[forced] = 0.0
    return x, forced


def solve_convex_qcqp(problem: QcqpProblem, *, psd_tol: float = 1e-9, trace: bool = False) -> Solution:
    """Solve a QCQP whose quadratic matrices all pass the PSD gate.

    Raises :class:`NotConvexError` when a matrix fails the gate.  Returns a
    Solution with status ``infeasible`` when no strictly feasible point is
    found.
    """
    extra_rows, nonhom = _gate(problem, psd_tol)
    n = problem.n
    A = problem.A_eq
    b = problem.b_eq
    if extra_rows:
        A = np.vstack([A, np.array(extra_rows)])
        b = np.concatenate([b, np.zeros(len(extra_rows))])
    tr = [] if trace else None
    try:
        A, b = _row_basis(A, b)
    except ValueError:
        return finish(problem, np.zeros(n), Status.INFEASIBLE, info={"reason": "inconsistent equalities"})

    x0, forced = _relative_interior(A, b, n)
    if x0 is None:
        return finish(problem, np.zeros(n), Status.INFEASIBLE, info={"reason": "empty polytope"})
    free = ~forced
    if not free.any():
        return finish(problem, x0, Status.OPTIMAL, info={"reason": "single point"})
    Af, bf = _row_basis(A[:, free], b)
    Qs = [problem.Q[k][np.ix_(free, free)] for k in nonhom]
    qs = [problem.q[k][free] for k in nonhom]
    rs = [problem.r[k] for k in nonhom]
    cf = problem.c[free]
    xf = x0[free]

    it = 0
    if Qs:
        g0 = np.array([xf @ Q @ xf + q @ xf + r for Q, q, r in zip(Qs, qs, rs)])
        if np.any(g0 >= 0):
            # phase 1 on (x, s): minimise s subject to g_k(x) <= s
            nf = xf.size
            s0 = float(np.max(g0)) + 1.0
            z = np.concatenate([xf, [s0 + 1.0]])  # shifted slack variable sigma = s + shift
            shift = 1.0
            Ap = np.hstack([Af, np.zeros((Af.shape[0], 1))])
            Qp = []
            qp = []
            rp = []
            for Q, q, r in zip(Qs, qs, rs):
                Qz = np.zeros((nf + 1, nf + 1))
                Qz[:nf, :nf] = Q
                qz = np.concatenate([q, [-1.0]])
                Qp.append(Qz)
                qp.append(qz)
                rp.append(r + shift)
            cp = np.zeros(nf + 1)
            cp[-1] = 1.0
            bar1 = _Barrier(cp, Ap, bf, Qp, qp, rp)
            z, it = _barrier_solve(bar1, z, trace=tr,
                                   stop=lambda zz: np.all(np.array([zz[:nf] @ Q @ zz[:nf] + q @ zz[:nf] + r
                                                                    for Q, q, r in zip(Qs, qs, rs)]) < 0))
            xf = z[:nf]
            g0 = np.array([xf @ Q @ xf + q @ xf + r for Q, q, r in zip(Qs, qs, rs)])
            if np.any(g0 >= 0):
                return finish(problem, np.where(free, 0.0, 0.0), Status.INFEASIBLE,
                              info={"reason": "no strictly feasible point", "phase1_max_g": float(g0.max())},
                              trace=tr or [])

    bar = _Barrier(cf, Af, bf, Qs, qs, rs)
    xf, it = _barrier_solve(bar, xf, trace=tr, it0=it)
    x = np.zeros(n)
    x[free] = xf
    return finish(problem, x, Status.OPTIMAL, info={"centerings": it, "forced_zero": np.flatnonzero(forced).tolist()},
                  trace=tr or [])
