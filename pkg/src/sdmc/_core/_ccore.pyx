# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: phi-ODE hitting time, batch closed-loop simulation, cost chain."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor, pow, INFINITY

cnp.import_array()


cdef inline double _phi_rhs(double phi, double L, double zeta) nogil:
    return -2.0 * L * phi - zeta * (phi * phi + 1.0)


def phi_hitting_time(double L, double zeta, double lambda_bar, double step, long long max_steps):
    cdef double phi = 1.0 / lambda_bar
    cdef double t = 0.0, h = step
    cdef double k1, k2, k3, k4, nxt
    cdef double hit = -1.0
    cdef long long i
    with nogil:
        for i in range(max_steps):
            k1 = _phi_rhs(phi, L, zeta)
            k2 = _phi_rhs(phi + 0.5 * h * k1, L, zeta)
            k3 = _phi_rhs(phi + 0.5 * h * k2, L, zeta)
            k4 = _phi_rhs(phi + h * k3, L, zeta)
            nxt = phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if nxt <= lambda_bar:
                hit = t + h * (phi - lambda_bar) / (phi - nxt)
                break
            phi = nxt
            t += h
    return hit


cdef inline Py_ssize_t _draw(const double[:] row, double u) nogil:
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t last = row.shape[0] - 1
    while k < last and row[k] < u:
        k += 1
    return k


def simulate_batch(const double[:, ::1] Phi, double xi_gain,
                   const double[:, ::1] x0, const double[:, ::1] xh0, const double[::1] xi0,
                   const long long[::1] r0, const long long[::1] s0, const long long[::1] bits,
                   const double[:, :, :, ::1] cdf_P, const double[:, :, ::1] cdf_q,
                   const double[:, ::1] cdf_ctrl, const double[:, :, ::1] cdf_pow,
                   const double[:, :, ::1] cost, const double[:, :, ::1] uniforms,
                   double blowup, double xi_floor):
    cdef Py_ssize_t runs = uniforms.shape[0]
    cdef Py_ssize_t N = uniforms.shape[1]
    cdef Py_ssize_t n = x0.shape[1]
    cdef Py_ssize_t m = 2 * n

    x_norm_a = np.full((runs, N + 1), np.inf)
    e_norm_a = np.full((runs, N + 1), np.inf)
    xi_a = np.full((runs, N + 1), np.inf)
    rate_a = np.zeros((runs, N + 1), dtype=np.int64)
    env_a = np.zeros((runs, N + 1), dtype=np.int64)
    pow_a = np.zeros((runs, N + 1), dtype=np.int64)
    cum_a = np.zeros((runs, N + 1))
    esc_a = np.zeros(runs, dtype=np.int64)
    blow_a = np.full(runs, -1, dtype=np.int64)

    cdef double[:, ::1] x_norm = x_norm_a
    cdef double[:, ::1] e_norm = e_norm_a
    cdef double[:, ::1] xi_rec = xi_a
    cdef long long[:, ::1] rate_rec = rate_a
    cdef long long[:, ::1] env_rec = env_a
    cdef long long[:, ::1] pow_rec = pow_a
    cdef double[:, ::1] cum_rec = cum_a
    cdef long long[::1] escapes = esc_a
    cdef long long[::1] blow_step = blow_a

    z_a = np.zeros(m)
    zn_a = np.zeros(m)
    cdef double[::1] z = z_a
    cdef double[::1] zn = zn_a

    cdef Py_ssize_t run, k, d, i, j
    cdef long long r, s, p, a, R
    cdef double xi, cum, xn, en, v, emax, cells, width, idx
    cdef bint alive

    with nogil:
        for run in range(runs):
            for d in range(n):
                z[d] = x0[run, d]
                z[n + d] = xh0[run, d]
            xi = xi0[run]
            r = r0[run]
            s = s0[run]
            p = 0
            cum = 0.0
            alive = True
            xn = 0.0
            en = 0.0
            for d in range(n):
                v = fabs(z[d])
                if v > xn:
                    xn = v
                v = fabs(z[d] - z[n + d])
                if v > en:
                    en = v
            x_norm[run, 0] = xn
            e_norm[run, 0] = en
            xi_rec[run, 0] = xi
            rate_rec[run, 0] = r
            env_rec[run, 0] = s
            pow_rec[run, 0] = p
            cum_rec[run, 0] = cum
            for k in range(N):
                a = _draw(cdf_ctrl[s], uniforms[run, k, 0])
                p = _draw(cdf_pow[r, s], uniforms[run, k, 1])
                cum = cum + cost[s, p, r]
                r = _draw(cdf_P[r, s, p], uniforms[run, k, 2])
                s = _draw(cdf_q[s, a], uniforms[run, k, 3])
                if alive:
                    # quantizer jump
                    emax = 0.0
                    for d in range(n):
                        v = fabs(z[d] - z[n + d])
                        if v > emax:
                            emax = v
                    if emax > xi:
                        xi = 2.0 * (emax if emax > xi else xi)
                        escapes[run] += 1
                    R = bits[r]
                    if R > 0:
                        cells = pow(2.0, <double> R)
                        width = 2.0 * xi / cells
                        for d in range(n):
                            idx = floor((z[d] - z[n + d] + xi) / width)
                            if idx < 0.0:
                                idx = 0.0
                            if idx > cells - 1.0:
                                idx = cells - 1.0
                            z[n + d] = z[n + d] - xi + (idx + 0.5) * width
                        xi = xi / cells
                    if xi < xi_floor:
                        xi = xi_floor
                    # flow over one period
                    for i in range(m):
                        v = 0.0
                        for j in range(m):
                            v = v + Phi[i, j] * z[j]
                        zn[i] = v
                    for i in range(m):
                        z[i] = zn[i]
                    xi = xi * xi_gain
                    xn = 0.0
                    en = 0.0
                    for d in range(n):
                        v = fabs(z[d])
                        if v != v:
                            xn = INFINITY
                        elif v > xn:
                            xn = v
                        v = fabs(z[d] - z[n + d])
                        if v > en:
                            en = v
                    if not (xn <= blowup):
                        alive = False
                        blow_step[run] = k + 1
                    else:
                        x_norm[run, k + 1] = xn
                        e_norm[run, k + 1] = en
                        xi_rec[run, k + 1] = xi
                rate_rec[run, k + 1] = r
                env_rec[run, k + 1] = s
                pow_rec[run, k + 1] = p
                cum_rec[run, k + 1] = cum
    return {
        "x_norm": x_norm_a, "e_norm": e_norm_a, "xi": xi_a, "rate": rate_a, "env": env_a,
        "power": pow_a, "cum_cost": cum_a, "escapes": esc_a, "blow_step": blow_a,
    }


def simulate_chain(const double[:, :, :, ::1] cdf_P, const double[:, :, ::1] cdf_q, const double[:, ::1] cdf_ctrl,
                   const double[:, :, ::1] cdf_pow, const double[:, :, ::1] cost, long long r0, long long s0,
                   const double[:, ::1] uniforms):
    cdef Py_ssize_t Mr = cdf_P.shape[0], Ms = cdf_P.shape[1], Mp = cdf_P.shape[2]
    visits_a = np.zeros((Ms, Mr, Mp), dtype=np.int64)
    cdef long long[:, :, ::1] visits = visits_a
    cdef long long r = r0, s = s0, p, a
    cdef double total = 0.0
    cdef Py_ssize_t k, N = uniforms.shape[0]
    with nogil:
        for k in range(N):
            a = _draw(cdf_ctrl[s], uniforms[k, 0])
            p = _draw(cdf_pow[r, s], uniforms[k, 1])
            total = total + cost[s, p, r]
            visits[s, r, p] += 1
            r = _draw(cdf_P[r, s, p], uniforms[k, 2])
            s = _draw(cdf_q[s, a], uniforms[k, 3])
    return total, visits_a
