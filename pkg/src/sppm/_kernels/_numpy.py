"""Pure numpy/scipy versions of the AR(1) kernels.

Same signatures and conventions as the numba backend. Band factorizations
go through LAPACK (scipy.linalg banded routines); the log-determinant
comes from the banded Cholesky factor.
"""
import math

import numpy as np
from scipy.linalg import cholesky_banded, solve_banded, solveh_banded

LOG_2PI = math.log(2.0 * math.pi)


def precision_bands(T, phi, tau2):
    if T == 1:
        return np.array([(1.0 - phi * phi) / tau2]), np.empty(0)
    diag = np.full(T, (1.0 + phi * phi) / tau2)
    diag[0] = diag[-1] = 1.0 / tau2
    off = np.full(T - 1, -phi / tau2)
    return diag, off


def quad_form(w, phi, tau2):
    w = np.asarray(w, dtype=float)
    if w.shape[0] == 1:
        return float(w[0] ** 2 * (1.0 - phi * phi) / tau2)
    ends = w[0] ** 2 + w[-1] ** 2
    mid = np.dot(w[1:-1], w[1:-1])
    lag = np.dot(w[:-1], w[1:])
    return float((ends + (1.0 + phi * phi) * mid - 2.0 * phi * lag) / tau2)


def quad_form_sum(W, phi, tau2):
    W = np.asarray(W, dtype=float)
    if W.shape[1] == 1:
        return float(np.sum(W[:, 0] ** 2) * (1.0 - phi * phi) / tau2)
    ends = np.sum(W[:, 0] ** 2) + np.sum(W[:, -1] ** 2)
    mid = np.sum(W[:, 1:-1] ** 2)
    lag = np.sum(W[:, :-1] * W[:, 1:])
    return float((ends + (1.0 + phi * phi) * mid - 2.0 * phi * lag) / tau2)


def _log_det_one(T, phi, tau2):
    diag, off = precision_bands(T, phi, tau2)
    ab = np.empty((2, T))
    ab[0] = diag
    ab[1, :-1] = off
    ab[1, -1] = 0.0
    try:
        L = cholesky_banded(ab, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return np.nan
    return 2.0 * float(np.sum(np.log(L[0])))


def _log_det_many(T, phis, tau2s):
    phis = np.asarray(phis, dtype=float)
    tau2s = np.asarray(tau2s, dtype=float)
    if T == 1:
        out = np.log1p(-phis * phis) - np.log(tau2s)
        return np.where((phis * phis < 1.0) & (tau2s > 0.0), out, np.nan)
    return np.array([_log_det_one(T, p, t) for p, t in zip(phis, tau2s)])


def log_det_precision(T, phi, tau2):
    return float(_log_det_many(T, np.array([phi]), np.array([tau2]))[0])


def loglik_many(w, phis, tau2s):
    w = np.asarray(w, dtype=float)
    phis = np.asarray(phis, dtype=float)
    tau2s = np.asarray(tau2s, dtype=float)
    T = w.shape[0]
    if T == 1:
        q = w[0] ** 2 * (1.0 - phis * phis) / tau2s
    else:
        ends = w[0] ** 2 + w[-1] ** 2
        mid = np.dot(w[1:-1], w[1:-1])
        lag = np.dot(w[:-1], w[1:])
        q = (ends + (1.0 + phis * phis) * mid - 2.0 * phis * lag) / tau2s
    return -0.5 * T * LOG_2PI + 0.5 * _log_det_many(T, phis, tau2s) - 0.5 * q


def precision_matvec(V, phi, tau2):
    V = np.asarray(V, dtype=float)
    diag, off = precision_bands(V.shape[0], phi, tau2)
    out = diag[:, None] * V
    if V.shape[0] > 1:
        out[:-1] += off[:, None] * V[1:]
        out[1:] += off[:, None] * V[:-1]
    return out


def marginal_solve(V, sigma2, phi, tau2):
    V = np.asarray(V, dtype=float)
    T = V.shape[0]
    if T == 1:
        # scalar Q = sigma2 + tau2 / (1 - phi^2)
        return V / (sigma2 + tau2 / (1.0 - phi * phi))
    diag, off = precision_bands(T, phi, tau2)
    rhs = precision_matvec(V, phi, tau2)
    ab = np.zeros((2, T))
    ab[1] = 1.0 + sigma2 * diag
    ab[0, 1:] = sigma2 * off
    try:
        return solveh_banded(ab, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        return np.full_like(V, np.nan)


def sample_w(mu_raw, sigma2, phi, tau2, z):
    mu_raw = np.asarray(mu_raw, dtype=float)
    T = mu_raw.shape[0]
    diag, off = precision_bands(T, phi, tau2)
    ab = np.zeros((2, T))
    ab[0] = diag + 1.0 / sigma2
    ab[1, :-1] = off
    try:
        lower = cholesky_banded(ab, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return np.full(T, np.nan)
    # lower holds L in lower band storage; the transpose lives in upper storage
    upper = np.zeros((2, T))
    upper[1] = lower[0]
    upper[0, 1:] = lower[1, :-1]
    a = solve_banded((1, 0), lower, mu_raw, check_finite=False)
    return solve_banded((0, 1), upper, a + z, check_finite=False)
