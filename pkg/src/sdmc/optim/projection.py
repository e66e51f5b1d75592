"""Euclidean projection onto {x : A x = b, x >= 0} by a primal active-set method."""

from __future__ import annotations

import numpy as np


def _equality_ls(y_free, A_free, b):
    """argmin ||z - y||  s.t.  A z = b  (minimum-norm multipliers)."""
    if A_free.shape[0] == 0:
        return y_free.copy(), np.zeros(0)
    rhs = A_free @ y_free - b
    G = A_free @ A_free.T
    nu = np.linalg.lstsq(G, rhs, rcond=1e-13)[0]
    return y_free - A_free.T @ nu, nu


def project_polytope(y, A, b, x0, *, tol: float = 1e-12, max_iter: int = 500):
    """Project ``y`` onto the polytope, starting from the feasible point ``x0``.

    Finite termination is guaranteed by the usual active-set argument; the
    working set holds indices pinned to zero.  Ties are broken by lowest
    index so the result is deterministic.
    """
    y = np.asarray(y, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.maximum(np.asarray(x0, dtype=float).copy(), 0.0)
    n = x.size
    work = np.zeros(n, dtype=bool)
    work[x <= tol] = True
    x[work] = 0.0
    nu = np.zeros(A.shape[0])
    for _ in range(max_iter):
        free = ~work
        z = np.zeros(n)
        if free.any():
            z_free, nu = _equality_ls(y[free], A[:, free], b)
            z[free] = z_free
        else:
            nu = np.zeros(A.shape[0])
        d = z - x
        if np.max(np.abs(d), initial=0.0) <= tol:
            # multipliers of the pinned indices: grad = x - y + A' nu - lam = 0
            lam = x - y + A.T @ nu if A.shape[0] else x - y
            neg = np.flatnonzero(work & (lam < -tol))
            if neg.size == 0:
                return x
            work[neg[np.argmin(lam[neg])]] = False
            continue
        # step toward z until a free coordinate hits zero
        alpha = 1.0
        block = -1
        for i in np.flatnonzero(free & (d < -tol)):
            a = -x[i] / d[i]
            if a < alpha - 1e-15:
                alpha, block = a, i
        x = x + alpha * d
        if block >= 0:
            work[block] = True
            x[block] = 0.0
        x[work] = 0.0
    return x
