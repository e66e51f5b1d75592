"""Brute-force grid oracle over the affine slice of the nonnegative orthant.

Equalities are eliminated by choosing pivot variables with column-pivoted QR,
the remaining free variables are enumerated on a lattice of the given
resolution (bounded by per-variable and total maxima obtained by LP), and
every lattice point is filtered by the full constraint set.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import qr

from .problems import LpProblem, Status, finish
from .simplex import solve_lp

FEAS_TOL = 1e-9
MAX_FREE = 10


def _lattice(caps, budget):
    """Integer points k >= 0 with k_i <= caps[i] and sum(k) <= budget."""
    pts = np.zeros((1, 0), dtype=np.int64)
    for cap in caps:
        used = pts.sum(axis=1)
        blocks = []
        for v in range(int(cap) + 1):
            ok = used + v <= budget
            if not ok.any():
                break
            sub = pts[ok]
            blocks.append(np.hstack([sub, np.full((sub.shape[0], 1), v, dtype=np.int64)]))
        pts = np.vstack(blocks)
    return pts


def _max_of(c, A, b, n):
    sol = solve_lp(LpProblem(c=-c, A_eq=A, b_eq=b))
    if sol.status == Status.UNBOUNDED:
        raise ValueError("grid oracle needs a bounded polytope")
    if sol.status != Status.OPTIMAL:
        return None
    return -sol.objective


def grid_oracle(problem, resolution: float = 0.02, *, tail_dims: int = 4):
    """Best feasible lattice point of ``problem`` at ``resolution``.

    Returns a Solution with status ``optimal`` (the best grid point, which is
    not a certificate of global optimality off the grid) or
    ``infeasible-at-resolution``.
    """
    if not 0.0 < resolution <= 0.5:
        raise ValueError("resolution must lie in (0, 0.5]")
    n = problem.n
    A, b = problem.A_eq, problem.b_eq
    if A.shape[0]:
        _, R, perm = qr(A, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-10 * max(1.0, diag.max(initial=0.0))))
    else:
        perm, rank = np.arange(n), 0
    piv = np.sort(perm[:rank])
    free = np.array([i for i in range(n) if i not in set(piv.tolist())], dtype=int)
    d = free.size
    if d > MAX_FREE:
        raise ValueError(f"{d} free variables after elimination; the oracle supports at most {MAX_FREE}")

    if rank:
        AB = A[:, piv]
        AF = A[:, free]
        sol_b = np.linalg.lstsq(AB, b, rcond=None)[0]
        Mmap = np.linalg.lstsq(AB, AF, rcond=None)[0]  # x_B = sol_b - Mmap x_F
    else:
        sol_b = np.zeros(0)
        Mmap = np.zeros((0, d))

    caps = []
    for i in free:
        e = np.zeros(n)
        e[i] = 1.0
        u = _max_of(e, A, b, n)
        if u is None:
            return finish(problem, np.zeros(n), Status.INFEASIBLE_AT_RESOLUTION, info={"reason": "empty polytope"})
        caps.append(int(np.floor(u / resolution + 1e-9)))
    if d:
        s = np.zeros(n)
        s[free] = 1.0
        budget = int(np.floor(_max_of(s, A, b, n) / resolution + 1e-9))
    else:
        budget = 0

    t = min(d, tail_dims)
    head_caps, tail_caps = caps[:d - t], caps[d - t:]
    tail = _lattice(tail_caps, budget)
    order = np.argsort(tail.sum(axis=1), kind="stable")
    tail = tail[order]
    tail_sum = tail.sum(axis=1)

    best_obj, best_x, count = np.inf, None, 0
    heads = itertools.product(*[range(c + 1) for c in head_caps])
    for head in heads:
        used = sum(head)
        if used > budget:
            continue
        k = np.searchsorted(tail_sum, budget - used, side="right")
        if k == 0:
            continue
        K = np.hstack([np.tile(np.array(head, dtype=np.int64), (k, 1)), tail[:k]]) if head else tail[:k]
        XF = K * resolution
        X = np.zeros((k, n))
        X[:, free] = XF
        if rank:
            X[:, piv] = sol_b - XF @ Mmap.T
        ok = np.all(X >= -FEAS_TOL, axis=1)
        if rank:
            ok &= np.max(np.abs(X @ A.T - b), axis=1) <= 1e-9
        if not ok.any():
            continue
        Xo = X[ok]
        g = problem.constraint_values(Xo)
        if np.ndim(g) == 2 and g.shape[1]:
            okg = np.all(g <= FEAS_TOL, axis=1)
            Xo = Xo[okg]
        if Xo.shape[0] == 0:
            continue
        count += Xo.shape[0]
        obj = Xo @ problem.c
        j = int(np.argmin(obj))
        if obj[j] < best_obj - 1e-15:
            best_obj, best_x = float(obj[j]), Xo[j].copy()

    if best_x is None:
        return finish(problem, np.zeros(n), Status.INFEASIBLE_AT_RESOLUTION,
                      info={"resolution": resolution, "free_dims": d})
    best_x = np.maximum(best_x, 0.0)
    return finish(problem, best_x, Status.OPTIMAL, eq_tol=1e-8, ineq_tol=1e-8,
                  info={"resolution": resolution, "free_dims": d, "feasible_points": count})
