"""Pure-Python reference versions of the compiled kernels.

Used when the Cython extension is unavailable or when ``MLFDM_PURE_PYTHON=1``.
Every function here mirrors ``_ckernels`` argument-for-argument.
"""

import math

import numpy as np


def arma_kalman(x, phi, rvec, P0, resid, a_out, P_out):
    x = np.asarray(x, dtype=float)
    phi = [float(v) for v in phi]
    rvec = [float(v) for v in rvec]
    r = len(phi)
    a = [0.0] * r
    P = [[float(P0[i][j]) for j in range(r)] for i in range(r)]
    sumlog = 0.0
    ssq = 0.0
    steady = False
    for t in range(len(x)):
        v = float(x[t]) - a[0]
        F = max(P[0][0], 1e-300)
        sumlog += math.log(F)
        ssq += v * v / F
        resid[t] = v / math.sqrt(F)
        TP = [[phi[i] * P[0][j] + (P[i + 1][j] if i + 1 < r else 0.0) for j in range(r)]
              for i in range(r)]
        K = [TP[i][0] / F for i in range(r)]
        a = [phi[i] * a[0] + K[i] * v + (a[i + 1] if i + 1 < r else 0.0) for i in range(r)]
        if not steady:
            Pn = [[TP[i][0] * phi[j] + rvec[i] * rvec[j] - K[i] * K[j] * F
                   + (TP[i][j + 1] if j + 1 < r else 0.0) for j in range(r)]
                  for i in range(r)]
            diff = sum(abs(Pn[i][j] - P[i][j]) for i in range(r) for j in range(r))
            P = Pn
            if diff < 1e-13:
                steady = True
    for i in range(r):
        a_out[i] = a[i]
        for j in range(r):
            P_out[i, j] = P[i][j]
    return sumlog, ssq


def life_expectancy_batch(m, widths, infant_rule):
    m = np.asarray(m, dtype=float)
    widths = np.asarray(widths, dtype=float)
    N, p = m.shape
    l = np.ones(N)
    total = np.zeros(N)
    for i in range(p - 1):
        mx = m[:, i]
        n_i = widths[i]
        if i == 0 and infant_rule:
            ax = np.minimum(0.07 + 1.7 * mx, 0.35)
        else:
            ax = 0.5 * n_i
        q = np.minimum(n_i * mx / (1.0 + (n_i - ax) * mx), 1.0 - 1e-12)
        d = l * q
        total += n_i * (l - d) + ax * d
        l = l - d
    return total + l / m[:, p - 1]


def _binomial_weights(n, d):
    pi = np.empty(n)
    if n:
        pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[k - 1] * (k - 1 - d) / k
    return pi


def frac_diff(x, d):
    x = np.asarray(x, dtype=float)
    n = len(x)
    return np.convolve(x, _binomial_weights(n, d))[:n]


def frac_integrate(y, d):
    y = np.asarray(y, dtype=float)
    n = len(y)
    pi = _binomial_weights(n, d)
    x = np.empty(n)
    for t in range(n):
        x[t] = y[t] - np.dot(pi[1:t + 1], x[t - 1::-1][:t]) if t else y[t]
    return x
