"""ARIMA estimation by exact Gaussian likelihood and stepwise AICc order search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .. import kernels
from .base import ScoreForecast, TsFitError, TsModel, psi_weights
from .kpss import select_d

MAX_P = 5
MAX_Q = 5
MAX_ORDER = 5
_U_CLIP = 7.0
LOGLIK_TOL = 1e-8
ROOT_MARGIN = 1.01


def min_root_modulus(coef, sign: float) -> float:
    """Smallest root modulus of 1 + sign * (c_1 z + ... + c_k z^k); inf for an empty polynomial."""
    c = np.asarray(coef, dtype=float)
    if not np.any(c):
        return math.inf
    # inverse roots solve z^k + sign (c_1 z^{k-1} + ... + c_k) = 0; monic, so tiny c_k is harmless
    inv = np.abs(np.roots(np.r_[1.0, sign * c]))
    top = float(inv.max())
    return math.inf if top == 0 else 1.0 / top


def near_unit_root(ar, ma, margin: float = ROOT_MARGIN) -> bool:
    return min_root_modulus(ar, -1.0) < margin or min_root_modulus(ma, 1.0) < margin


def pacf_to_coef(r) -> np.ndarray:
    """Map partial autocorrelations in (-1, 1) to stationary AR coefficients."""
    phi = np.zeros(0)
    for rk in np.asarray(r, dtype=float):
        phi = np.append(phi - rk * phi[::-1], rk)
    return phi


def coef_to_pacf(phi) -> np.ndarray:
    phi = np.array(phi, dtype=float)
    out = np.zeros(len(phi))
    for k in range(len(phi) - 1, -1, -1):
        rk = phi[k]
        out[k] = rk
        if k == 0:
            break
        if abs(rk) >= 1:
            rk = math.copysign(0.999, rk)
        phi = (phi[:k] + rk * phi[:k][::-1]) / (1 - rk * rk)
    return out


def _state_matrices(ar, ma):
    p, q = len(ar), len(ma)
    r = max(p, q + 1)
    phi = np.zeros(r)
    phi[:p] = ar
    rvec = np.zeros(r)
    rvec[0] = 1.0
    rvec[1:q + 1] = ma
    T = np.zeros((r, r))
    T[:, 0] = phi
    T[np.arange(r - 1), np.arange(1, r)] = 1.0
    return phi, rvec, T


_EYE = {r: np.eye(r * r) for r in range(1, 12)}


def _stationary_cov(T, rvec) -> np.ndarray:
    r = len(rvec)
    if r == 1:
        return np.array([[1.0 / (1.0 - T[0, 0] ** 2)]])
    Q = np.outer(rvec, rvec)
    TT = (T[:, None, :, None] * T[None, :, None, :]).reshape(r * r, r * r)
    vecP = np.linalg.solve(_EYE[r] - TT, Q.ravel())
    P = vecP.reshape(r, r)
    return (P + P.T) / 2


def arma_filter(x, ar, ma):
    """Run the Kalman filter on a zero-mean series.

    Returns ``(sumlog, ssq, resid, a_next, P_next)`` with unit innovation variance.
    """
    x = np.ascontiguousarray(x, dtype=float)
    phi, rvec, T = _state_matrices(ar, ma)
    P0 = np.ascontiguousarray(_stationary_cov(T, rvec))
    r = len(phi)
    resid = np.empty(len(x))
    a_out = np.empty(r)
    P_out = np.empty((r, r))
    sumlog, ssq = kernels.arma_kalman(x, phi, rvec, P0, resid, a_out, P_out)
    return sumlog, ssq, resid, a_out, P_out


def concentrated_loglik(x, ar, ma) -> tuple[float, float]:
    """Exact Gaussian log-likelihood with the innovation variance profiled out."""
    n = len(x)
    sumlog, ssq, *_ = arma_filter(x, ar, ma)
    sigma2 = ssq / n
    if not sigma2 > 0:
        return math.inf, 0.0
    return -0.5 * n * (math.log(2 * math.pi * sigma2) + 1) - 0.5 * sumlog, sigma2


@dataclass
class ArimaModel(TsModel):
    order: tuple[int, int, int] = (0, 0, 0)
    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean: float = 0.0
    include_mean: bool = False

    def __post_init__(self):
        self.kind = "arima"

    @property
    def n_params(self) -> int:
        p, _, q = self.order
        return p + q + int(self.include_mean) + 1

    def _w(self, y=None):
        y = self.y if y is None else np.asarray(y, dtype=float)
        d = self.order[1]
        return np.diff(y, d) if d else y

    def residuals(self) -> np.ndarray:
        """One-step innovations on the differenced scale."""
        _, _, resid, _, _ = arma_filter(self._w() - self.mean, self.ar, self.ma)
        return resid * math.sqrt(self.sigma2)

    def _end_state(self, y=None):
        return arma_filter(self._w(y) - self.mean, self.ar, self.ma)

    def _integrate(self, wpath: np.ndarray, y=None) -> np.ndarray:
        y = self.y if y is None else y
        d = self.order[1]
        out = wpath
        for k in range(d, 0, -1):
            last = np.diff(y, k - 1)[-1] if k - 1 else y[-1]
            out = last + np.cumsum(out, axis=-1)
        return out

    def forecast(self, H: int) -> ScoreForecast:
        _, _, _, a, _ = self._end_state()
        phi, rvec, T = _state_matrices(self.ar, self.ma)
        w = np.empty(H)
        for h in range(H):
            w[h] = self.mean + a[0]
            a = T @ a
        mean = self._integrate(w)
        psi = psi_weights(self.ar, self.ma, H, self.order[1])
        se = np.sqrt(self.sigma2 * np.cumsum(psi ** 2))
        return ScoreForecast(mean, se, self)

    def simulate(self, H: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Future sample path(s) including filtered-state uncertainty."""
        _, _, _, a, P = self._end_state()
        phi, rvec, T = _state_matrices(self.ar, self.ma)
        B = 1 if size is None else size
        sd = math.sqrt(self.sigma2)
        vals, vecs = np.linalg.eigh(P)
        L = vecs * np.sqrt(np.clip(vals, 0, None))
        alpha = a + (rng.standard_normal((B, len(a))) @ L.T) * sd
        eps = rng.standard_normal((B, H)) * sd
        w = np.empty((B, H))
        for h in range(H):
            w[:, h] = self.mean + alpha[:, 0]
            if h + 1 < H:
                alpha = alpha @ T.T + np.outer(eps[:, h + 1], rvec)
        out = self._integrate(w)
        return out[0] if size is None else out

    def apply(self, y) -> "ArimaModel":
        y = np.asarray(y, dtype=float)
        m = ArimaModel(y=y, sigma2=self.sigma2, order=self.order, ar=self.ar.copy(),
                       ma=self.ma.copy(), mean=self.mean, include_mean=self.include_mean,
                       flags=self.flags)
        w = m._w()
        if len(w):
            ll, s2 = concentrated_loglik(w - m.mean, m.ar, m.ma)
            m.loglik = ll
        return m


def _aicc(loglik: float, k: int, n: int) -> float:
    if n - k - 1 <= 0 or not math.isfinite(loglik):
        return math.inf
    return -2 * loglik + 2 * k + 2 * k * (k + 1) / (n - k - 1)


def _start_pacf(w, p: int) -> np.ndarray:
    if p == 0:
        return np.zeros(0)
    x = w - w.mean()
    denom = x @ x
    if denom <= 0 or len(x) <= p + 1:
        return np.zeros(p)
    acf = np.array([x[k:] @ x[:len(x) - k] / denom for k in range(p + 1)])
    # Durbin-Levinson partial autocorrelations
    pac = np.zeros(p)
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, p + 1):
        num = acf[k] - (phi @ acf[1:k][::-1] if k > 1 else 0.0)
        rk = num / v if v > 0 else 0.0
        rk = float(np.clip(rk, -0.95, 0.95))
        phi = np.append(phi - rk * phi[::-1], rk)
        v *= 1 - rk * rk
        pac[k - 1] = rk
    return pac


def fit_arima(y, order: tuple[int, int, int], include_mean: bool = True) -> ArimaModel:
    """Maximum likelihood ARIMA(p, d, q), with a mean (d=0) or drift (d=1) if requested."""
    y = np.asarray(y, dtype=float)
    p, d, q = order
    if d > 1:
        include_mean = False
    w = np.diff(y, d) if d else y.copy()
    n = len(w)
    if n < 2:
        raise TsFitError("series too short after differencing")
    k_total = p + q + int(include_mean) + 1

    def unpack(theta):
        u = np.clip(theta[:p + q], -_U_CLIP, _U_CLIP)
        ar = pacf_to_coef(np.tanh(u[:p]))
        ma = -pacf_to_coef(np.tanh(u[p:]))
        c = theta[p + q] if include_mean else 0.0
        return ar, ma, c

    def nll(theta):
        ar, ma, c = unpack(theta)
        ll, _ = concentrated_loglik(w - c, ar, ma)
        return -ll if math.isfinite(ll) else 1e100

    x0 = np.r_[np.arctanh(_start_pacf(w, p)), np.zeros(q)]
    scale = float(np.std(w)) or 1.0
    if include_mean:
        x0 = np.r_[x0, w.mean()]
    dim = len(x0)
    if dim == 0:
        ll, s2 = concentrated_loglik(w, np.zeros(0), np.zeros(0))
        theta = x0
    else:
        steps = np.r_[np.full(p + q, 0.3), [0.3 * scale / math.sqrt(n)] if include_mean else []]
        theta, best = x0, nll(x0)
        for _ in range(4):
            simplex = np.vstack([theta, theta + np.diag(steps)])
            res = minimize(nll, theta, method="Nelder-Mead",
                           options={"initial_simplex": simplex, "xatol": 1e-7,
                                    "fatol": LOGLIK_TOL, "maxiter": 400 * dim,
                                    "maxfev": 400 * dim})
            improved = best - res.fun
            if res.fun <= best:
                theta, best = res.x, res.fun
            if improved < LOGLIK_TOL:
                break
            steps = steps * 0.5
        if not np.isfinite(best) or best >= 1e99:
            raise TsFitError(f"ARIMA{order} likelihood could not be evaluated")
        ar, ma, c = unpack(theta)
        ll, s2 = concentrated_loglik(w - c, ar, ma)
    ar, ma, c = unpack(theta) if dim else (np.zeros(0), np.zeros(0), 0.0)
    return ArimaModel(y=y, sigma2=s2, loglik=ll, aicc=_aicc(ll, k_total, n), order=(p, d, q),
                      ar=ar, ma=ma, mean=float(c), include_mean=include_mean)


def _better(a: ArimaModel, b: ArimaModel | None) -> bool:
    if b is None:
        return True
    if a.aicc < b.aicc - 1e-9:
        return True
    return abs(a.aicc - b.aicc) <= 1e-9 and a.n_params < b.n_params


def auto_arima(y, d: int | None = None, max_p: int = MAX_P, max_q: int = MAX_Q,
               max_order: int = MAX_ORDER, allow_mean: bool = True, max_steps: int = 94):
    """Stepwise AICc search over (p, q) after choosing d by successive KPSS tests.

    Candidates with an AR or MA root inside ``ROOT_MARGIN`` are discarded.
    Falls back to a random walk with drift (flagged) when no candidate fits.
    """
    from .simple import fit_rwd

    y = np.asarray(y, dtype=float)
    if d is None:
        d = select_d(y)
    allow_const = allow_mean and d <= 1
    fitted: dict[tuple[int, int, bool], ArimaModel | None] = {}

    def try_fit(p, q, c):
        key = (p, q, c)
        if key in fitted:
            return fitted[key]
        if p < 0 or q < 0 or p > max_p or q > max_q or p + q > max_order or (c and not allow_const):
            return None
        try:
            m = fit_arima(y, (p, d, q), include_mean=c)
            if not math.isfinite(m.aicc) or near_unit_root(m.ar, m.ma):
                m = None
        except (TsFitError, np.linalg.LinAlgError, ValueError):
            m = None
        fitted[key] = m
        return m

    best = None
    starts = [(2, 2), (0, 0), (1, 0), (0, 1)]
    for p, q in starts:
        m = try_fit(p, q, allow_const)
        if m is not None and _better(m, best):
            best = m
    m = try_fit(0, 0, False)
    if allow_const and m is not None and _better(m, best):
        best = m
    if best is None:
        model = fit_rwd(y)
        model.flags = model.flags + ("arima_fallback",)
        return model

    for _ in range(max_steps):
        p, _, q = best.order
        c = best.include_mean
        moves = [(p - 1, q, c), (p + 1, q, c), (p, q - 1, c), (p, q + 1, c),
                 (p - 1, q - 1, c), (p + 1, q + 1, c), (p - 1, q + 1, c), (p + 1, q - 1, c),
                 (p, q, not c)]
        improved = False
        for mp, mq, mc in moves:
            m = try_fit(mp, mq, mc)
            if m is not None and _better(m, best):
                best, improved = m, True
                break
        if not improved:
            break
    return best
