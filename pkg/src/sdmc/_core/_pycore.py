"""Pure-Python/numpy reference implementations of the hot kernels.

Each function mirrors the compiled version in ``_ccore.pyx`` operation for
operation; the batch simulator is vectorized across runs instead of looping.
"""

from __future__ import annotations

import math

import numpy as np


def phi_hitting_time(L, zeta, lambda_bar, step, max_steps):
    """First time the solution of phi' = -2 L phi - zeta (phi^2 + 1) drops to lambda_bar.

    Starts from phi(0) = 1 / lambda_bar, integrates with classical RK4 and
    interpolates linearly inside the crossing step.  Returns -1.0 when the
    level is not reached within ``max_steps`` steps.
    """
    def f(phi):
        return -2.0 * L * phi - zeta * (phi * phi + 1.0)

    phi = 1.0 / lambda_bar
    t = 0.0
    h = step
    for _ in range(int(max_steps)):
        k1 = f(phi)
        k2 = f(phi + 0.5 * h * k1)
        k3 = f(phi + 0.5 * h * k2)
        k4 = f(phi + h * k3)
        nxt = phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if nxt <= lambda_bar:
            return t + h * (phi - lambda_bar) / (phi - nxt)
        phi = nxt
        t += h
    return -1.0


def _sample(cdf, u):
    """Inverse-CDF draw: first index whose cumulative value exceeds ``u``."""
    k = (cdf < u[:, None]).sum(axis=1) if cdf.ndim == 2 else int((cdf < u).sum())
    return np.minimum(k, cdf.shape[-1] - 1)


def quantize(x, xh, xi, bits):
    """Per-dimension zoom quantizer on a batch; returns (xh, xi, escaped)."""
    e = x - xh
    emax = np.max(np.abs(e), axis=1)
    escaped = emax > xi
    xi = np.where(escaped, 2.0 * np.maximum(emax, xi), xi)
    cells = np.power(2.0, bits)
    act = bits > 0
    if act.any():
        width = 2.0 * xi / cells
        idx = np.floor((e + xi[:, None]) / width[:, None])
        idx = np.clip(idx, 0.0, (cells - 1.0)[:, None])
        centre = xh - xi[:, None] + (idx + 0.5) * width[:, None]
        xh = np.where(act[:, None], centre, xh)
        xi = np.where(act, xi / cells, xi)
    return xh, xi, escaped


def simulate_batch(Phi, xi_gain, x0, xh0, xi0, r0, s0, bits, cdf_P, cdf_q, cdf_ctrl, cdf_pow, cost,
                   uniforms, blowup, xi_floor):
    """Simulate ``runs`` closed-loop trajectories over ``n_steps`` transmissions.

    Parameters
    ----------
    Phi : (2n, 2n) one-period propagator of z = [x, xh].
    xi_gain : one-period growth factor of the box half-width.
    x0, xh0 : (runs, n); xi0 : (runs,); r0, s0 : (runs,) int.
    bits : (M_R,) int bit count per rate.
    cdf_P : (M_R, M_s, M_p, M_R) cumulative next-rate distributions.
    cdf_q : (M_s, M_a, M_s) cumulative next-state distributions.
    cdf_ctrl : (M_s, M_a); cdf_pow : (M_R, M_s, M_p).
    cost : (M_s, M_p, M_R).
    uniforms : (runs, n_steps, 4).

    Returns
    -------
    dict of arrays with one column per sample time t_0 .. t_N.
    """
    runs, N = uniforms.shape[0], uniforms.shape[1]
    n = x0.shape[1]
    x = np.array(x0, dtype=float)
    xh = np.array(xh0, dtype=float)
    xi = np.array(xi0, dtype=float)
    r = np.array(r0, dtype=np.int64)
    s = np.array(s0, dtype=np.int64)
    p = np.zeros(runs, dtype=np.int64)
    cum = np.zeros(runs)
    alive = np.ones(runs, dtype=bool)
    blow_step = np.full(runs, -1, dtype=np.int64)
    escapes = np.zeros(runs, dtype=np.int64)
    out = {
        "x_norm": np.full((runs, N + 1), np.inf),
        "e_norm": np.full((runs, N + 1), np.inf),
        "xi": np.full((runs, N + 1), np.inf),
        "rate": np.zeros((runs, N + 1), dtype=np.int64),
        "env": np.zeros((runs, N + 1), dtype=np.int64),
        "power": np.zeros((runs, N + 1), dtype=np.int64),
        "cum_cost": np.zeros((runs, N + 1)),
    }

    def record(k, mask):
        out["x_norm"][mask, k] = np.max(np.abs(x[mask]), axis=1)
        out["e_norm"][mask, k] = np.max(np.abs(x[mask] - xh[mask]), axis=1)
        out["xi"][mask, k] = xi[mask]
        out["rate"][:, k] = r
        out["env"][:, k] = s
        out["power"][:, k] = p
        out["cum_cost"][:, k] = cum

    record(0, alive)
    PhiT = np.ascontiguousarray(Phi.T)
    for k in range(N):
        u = uniforms[:, k, :]
        a = _sample(cdf_ctrl[s], u[:, 0])
        p = _sample(cdf_pow[r, s], u[:, 1])
        cum = cum + cost[s, p, r]
        r = _sample(cdf_P[r, s, p], u[:, 2])
        s = _sample(cdf_q[s, a], u[:, 3])
        xh_new, xi_new, esc = quantize(x, xh, xi, bits[r])
        xh = np.where(alive[:, None], xh_new, xh)
        xi = np.where(alive, np.maximum(xi_new, xi_floor), xi)
        escapes += (esc & alive)
        z = np.hstack([x, xh]) @ PhiT
        x = np.where(alive[:, None], z[:, :n], x)
        xh = np.where(alive[:, None], z[:, n:], xh)
        xi = np.where(alive, xi * xi_gain, xi)
        xn = np.max(np.abs(x), axis=1)
        bad = alive & ~(xn <= blowup)
        blow_step[bad] = k + 1
        alive &= ~bad
        record(k + 1, alive)
    out["escapes"] = escapes
    out["blow_step"] = blow_step
    return out


def simulate_chain(cdf_P, cdf_q, cdf_ctrl, cdf_pow, cost, r0, s0, uniforms):
    """Cost-only chain of the (environment, rate, power) process.

    Returns the accumulated cost and the visit counts over (s, r, p).
    """
    Mr, Ms, Mp = cdf_P.shape[0], cdf_P.shape[1], cdf_P.shape[2]
    visits = np.zeros((Ms, Mr, Mp), dtype=np.int64)
    r, s = int(r0), int(s0)
    total = 0.0
    cP = cdf_P.tolist()
    cq = cdf_q.tolist()
    cc = cdf_ctrl.tolist()
    cw = cdf_pow.tolist()
    cst = cost.tolist()

    def draw(row, u):
        k = 0
        last = len(row) - 1
        while k < last and row[k] < u:
            k += 1
        return k

    for u0, u1, u2, u3 in uniforms.tolist():
        a = draw(cc[s], u0)
        p = draw(cw[r][s], u1)
        total += cst[s][p][r]
        visits[s, r, p] += 1
        r = draw(cP[r][s][p], u2)
        s = draw(cq[s][a], u3)
    return total, visits
