"""Local solver for nonconvex polynomial programs over a polytope.

The polynomial constraints ``g(x) <= 0`` are moved into an augmented
Lagrangian (Powell-Hestenes-Rockafellar penalty); each subproblem is solved
by spectral projected gradient on ``{A_eq x = b_eq, x >= 0}``.  Several
starts are run and reduced deterministically by (objective, point).
"""

from __future__ import annotations

import numpy as np

from .problems import LpProblem, Solution, Status, evaluate_residuals, finish
from .projection import project_polytope
from .simplex import solve_lp

POLY_TOL = 1e-7
EQ_TOL = 1e-8


def _violation(problem, x) -> float:
    res = evaluate_residuals(problem, x)
    return max(res["inequality"], res["equality"] / EQ_TOL * POLY_TOL, res["nonnegativity"] / EQ_TOL * POLY_TOL)


def _is_feasible(problem, x) -> bool:
    res = evaluate_residuals(problem, x)
    return res["inequality"] <= POLY_TOL and res["equality"] <= EQ_TOL and res["nonnegativity"] <= EQ_TOL


def certify_kkt(problem, x, *, active_tol: float = 1e-9, tol: float = 1e-9) -> bool:
    """True when ``x`` admits first-order multipliers to within ``tol``.

    Solves a small LP minimising the l1 stationarity residual over
    nonnegative multipliers of the active constraints.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    g = np.atleast_1d(problem.constraint_values(x))
    J = np.atleast_2d(problem.constraint_jacobian(x)) if g.size else np.zeros((0, n))
    act_g = np.flatnonzero(g >= -active_tol)
    act_x = np.flatnonzero(x <= active_tol)
    A = problem.A_eq
    m = A.shape[0]
    # columns: y (act_g), nu+ (m), nu- (m), lam (act_x), t+ (n), t- (n)
    cols = [J[act_g].T, A.T, -A.T, -np.eye(n)[:, act_x], np.eye(n), -np.eye(n)]
    M = np.hstack(cols)
    k = M.shape[1]
    cost = np.zeros(k)
    cost[-2 * n:] = 1.0
    sol = solve_lp(LpProblem(c=cost, A_eq=M, b_eq=-problem.c))
    return sol.status == Status.OPTIMAL and sol.objective <= tol * max(1.0, np.abs(problem.c).sum())


class _Lagrangian:
    def __init__(self, problem, y, rho):
        self.p, self.y, self.rho = problem, y, rho

    def value(self, x):
        g = np.atleast_1d(self.p.constraint_values(x))
        s = np.maximum(0.0, g + self.y / self.rho)
        return float(self.p.c @ x + 0.5 * self.rho * s @ s - (self.y @ self.y) / (2 * self.rho))

    def grad(self, x):
        g = np.atleast_1d(self.p.constraint_values(x))
        w = np.maximum(0.0, self.rho * g + self.y)
        if not w.any():
            return self.p.c.copy()
        return self.p.c + w @ np.atleast_2d(self.p.constraint_jacobian(x))


def _spg(lag: _Lagrangian, x, A, b, *, max_iter=3000, tol=1e-11):
    proj = lambda v, start: project_polytope(v, A, b, start)
    x = proj(x, x)
    f = lag.value(x)
    gr = lag.grad(x)
    alpha = 1.0
    for _ in range(max_iter):
        pg = proj(x - gr, x) - x
        if np.max(np.abs(pg), initial=0.0) <= tol:
            break
        d = proj(x - alpha * gr, x) - x
        slope = float(gr @ d)
        t = 1.0
        while True:
            xn = x + t * d
            fn = lag.value(xn)
            if fn <= f + 1e-4 * t * slope or t < 1e-16:
                break
            t *= 0.5
        gn = lag.grad(xn)
        s = xn - x
        yv = gn - gr
        sy = float(s @ yv)
        alpha = float(np.clip((s @ s) / sy, 1e-10, 1e10)) if sy > 1e-300 else 1e10
        if np.max(np.abs(s), initial=0.0) <= 1e-15:
            break
        x, f, gr = xn, fn, gn
    return x


def _augmented_lagrangian(problem, x, *, max_outer=60, rho0=10.0):
    m = np.atleast_1d(problem.constraint_values(x)).size
    y = np.zeros(m)
    rho = rho0
    A, b = problem.A_eq, problem.b_eq
    prev = np.inf
    trace = []
    raw_hist = []
    for k in range(max_outer):
        x = _spg(_Lagrangian(problem, y, rho), x, A, b)
        g = np.atleast_1d(problem.constraint_values(x))
        viol = float(np.max(np.maximum(g, -y / rho), initial=0.0))
        trace.append((k, float(problem.c @ x), float(np.max(g, initial=0.0))))
        y = np.maximum(0.0, y + rho * g)
        raw = float(np.max(g, initial=0.0))
        raw_hist.append(raw)
        if raw <= 1e-10 and viol <= 1e-9:
            break
        # large penalty and no progress on the violation: treat the start as stuck
        if rho >= 1e6 and len(raw_hist) > 3 and raw > 1e-6 and raw >= 0.999 * raw_hist[-4]:
            break
        if viol > 0.25 * prev:
            rho = min(rho * 10.0, 1e12)
        prev = viol
    return x, trace


def default_starts(problem, *, n_random: int = 8, seed: int = 0):
    """A vertex of the polytope followed by projected random simplex points."""
    vertex = solve_lp(LpProblem(c=problem.c, A_eq=problem.A_eq, b_eq=problem.b_eq))
    if vertex.status != Status.OPTIMAL:
        vertex = solve_lp(LpProblem(c=np.zeros(problem.n), A_eq=problem.A_eq, b_eq=problem.b_eq))
        if vertex.status != Status.OPTIMAL:
            return []
    starts = [vertex.x]
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        z = rng.dirichlet(np.ones(problem.n))
        starts.append(project_polytope(z, problem.A_eq, problem.b_eq, vertex.x))
    return starts


def solve_cpop_local(problem, starts=None, *, n_random: int = 8, seed: int = 0, trace: bool = False) -> Solution:
    """Best feasible local point of ``problem`` over a set of starts.

    A start that is already feasible and satisfies the first-order
    conditions is returned as is.  Feasible starts remain candidates, so the
    result is never worse than the best feasible start.
    """
    if starts is None:
        starts = default_starts(problem, n_random=n_random, seed=seed)
    starts = [np.asarray(s, dtype=float) for s in starts]
    if not starts:
        return finish(problem, np.zeros(problem.n), Status.INFEASIBLE_FROM_STARTS,
                      info={"reason": "empty polytope"})

    candidates = []
    traces = []
    for idx, x0 in enumerate(starts):
        if _is_feasible(problem, x0) and certify_kkt(problem, x0):
            candidates.append((x0, idx, "certified-start"))
            continue
        if _is_feasible(problem, x0):
            candidates.append((x0, idx, "feasible-start"))
        x, tr = _augmented_lagrangian(problem, x0)
        traces.extend(tr)
        candidates.append((x, idx, "descent"))

    feasible = [c for c in candidates if _is_feasible(problem, c[0])]
    tr_out = traces if trace else []
    if not feasible:
        worst = min(candidates, key=lambda c: (_violation(problem, c[0]), tuple(c[0])))
        return finish(problem, worst[0], Status.INFEASIBLE_FROM_STARTS,
                      info={"least_violation": _violation(problem, worst[0]), "start": worst[1]}, trace=tr_out)
    best = min(feasible, key=lambda c: (float(problem.c @ c[0]), tuple(np.round(c[0], 12))))
    return finish(problem, best[0], Status.FEASIBLE_LOCAL, ineq_tol=POLY_TOL, eq_tol=EQ_TOL,
                  info={"start": best[1], "origin": best[2], "n_starts": len(starts)}, trace=tr_out)
