# cython: language_level=3
"""Compiled hot loops. Semantics must match ``mlfdm._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, fabs, sqrt

cnp.import_array()

cdef enum:
    MAXR = 16


def arma_kalman(const double[::1] x, const double[::1] phi, const double[::1] rvec,
                const double[:, ::1] P0, double[::1] resid,
                double[::1] a_out, double[:, ::1] P_out):
    """Kalman filter for a zero-mean ARMA in Harvey form with unit innovation variance.

    Returns ``(sum log F_t, sum v_t^2 / F_t)``; standardized innovations are
    written to ``resid`` and the one-step-ahead state after the last
    observation to ``a_out``/``P_out``.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t r = phi.shape[0]
    cdef Py_ssize_t t, i, j
    cdef double a[MAXR]
    cdef double anew[MAXR]
    cdef double P[MAXR][MAXR]
    cdef double TP[MAXR][MAXR]
    cdef double Pn[MAXR][MAXR]
    cdef double K[MAXR]
    cdef double v, F, sumlog = 0.0, ssq = 0.0, diff
    cdef bint steady = False
    if r > MAXR:
        raise ValueError("state dimension too large")
    for i in range(r):
        a[i] = 0.0
        for j in range(r):
            P[i][j] = P0[i, j]
    for t in range(n):
        v = x[t] - a[0]
        F = P[0][0]
        if F < 1e-300:
            F = 1e-300
        sumlog += log(F)
        ssq += v * v / F
        resid[t] = v / sqrt(F)
        # TP = T @ P, with T[i,0] = phi[i], T[i,i+1] = 1
        for i in range(r):
            for j in range(r):
                TP[i][j] = phi[i] * P[0][j]
                if i + 1 < r:
                    TP[i][j] += P[i + 1][j]
        for i in range(r):
            K[i] = TP[i][0] / F
        for i in range(r):
            anew[i] = phi[i] * a[0] + K[i] * v
            if i + 1 < r:
                anew[i] += a[i + 1]
        for i in range(r):
            a[i] = anew[i]
        if not steady:
            diff = 0.0
            for i in range(r):
                for j in range(r):
                    Pn[i][j] = TP[i][0] * phi[j] + rvec[i] * rvec[j] - K[i] * K[j] * F
                    if j + 1 < r:
                        Pn[i][j] += TP[i][j + 1]
                    diff += fabs(Pn[i][j] - P[i][j])
            for i in range(r):
                for j in range(r):
                    P[i][j] = Pn[i][j]
            if diff < 1e-13:
                steady = True
    for i in range(r):
        a_out[i] = a[i]
        for j in range(r):
            P_out[i, j] = P[i][j]
    return sumlog, ssq


def life_expectancy_batch(const double[:, ::1] m, const double[::1] widths, bint infant_rule):
    """Period life expectancy at birth for each row of central death rates."""
    cdef Py_ssize_t N = m.shape[0]
    cdef Py_ssize_t p = m.shape[1]
    cdef Py_ssize_t b, i
    cdef double l, q, ax, n_i, mx, total, d
    out = np.empty(N, dtype=np.float64)
    cdef double[::1] e0 = out
    for b in range(N):
        l = 1.0
        total = 0.0
        for i in range(p - 1):
            mx = m[b, i]
            n_i = widths[i]
            if i == 0 and infant_rule:
                ax = 0.07 + 1.7 * mx
                if ax > 0.35:
                    ax = 0.35
            else:
                ax = 0.5 * n_i
            q = n_i * mx / (1.0 + (n_i - ax) * mx)
            if q > 1.0 - 1e-12:
                q = 1.0 - 1e-12
            d = l * q
            total += n_i * (l - d) + ax * d
            l -= d
        total += l / m[b, p - 1]
        e0[b] = total
    return out


def frac_diff(const double[::1] x, double d):
    """Apply the truncated binomial expansion of (1 - B)^d."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t t, k
    cdef double s
    pi_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] pi = pi_arr
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    if n == 0:
        return out
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[k - 1] * (k - 1 - d) / k
    for t in range(n):
        s = 0.0
        for k in range(t + 1):
            s += pi[k] * x[t - k]
        y[t] = s
    return out


def frac_integrate(const double[::1] y, double d):
    """Invert ``frac_diff``: solve (1 - B)^d x = y for x given zero pre-sample."""
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t t, k
    cdef double s
    pi_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] pi = pi_arr
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] x = out
    if n == 0:
        return out
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[k - 1] * (k - 1 - d) / k
    for t in range(n):
        s = y[t]
        for k in range(1, t + 1):
            s -= pi[k] * x[t - k]
        x[t] = s
    return out
