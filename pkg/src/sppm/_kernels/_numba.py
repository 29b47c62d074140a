"""Numba-compiled O(T) kernels for the stationary AR(1) precision matrix.

The precision of a stationary AR(1) vector of length T >= 2 is tridiagonal,

    R^{-1} = tau^{-2} * tridiag(-phi, [1, 1+phi^2, ..., 1+phi^2, 1], -phi)

and for T == 1 it is the scalar (1 - phi^2) / tau^2.
All functions here assume validated inputs; errors come back as NaN and
are turned into exceptions by the public wrappers.
"""
import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def precision_bands(T, phi, tau2):
    diag = np.empty(T)
    off = np.empty(max(T - 1, 0))
    if T == 1:
        diag[0] = (1.0 - phi * phi) / tau2
        return diag, off
    inner = (1.0 + phi * phi) / tau2
    for t in range(T):
        diag[t] = inner
    diag[0] = 1.0 / tau2
    diag[T - 1] = 1.0 / tau2
    for t in range(T - 1):
        off[t] = -phi / tau2
    return diag, off


@njit(cache=True, nogil=True)
def quad_form(w, phi, tau2):
    T = w.shape[0]
    if T == 1:
        return w[0] * w[0] * (1.0 - phi * phi) / tau2
    ends = w[0] * w[0] + w[T - 1] * w[T - 1]
    mid = 0.0
    for t in range(1, T - 1):
        mid += w[t] * w[t]
    lag = 0.0
    for t in range(T - 1):
        lag += w[t] * w[t + 1]
    return (ends + (1.0 + phi * phi) * mid - 2.0 * phi * lag) / tau2


@njit(cache=True, nogil=True)
def quad_form_sum(W, phi, tau2):
    s = 0.0
    for i in range(W.shape[0]):
        s += quad_form(W[i], phi, tau2)
    return s


@njit(cache=True, nogil=True)
def log_det_precision(T, phi, tau2):
    if T == 1:
        return math.log(1.0 - phi * phi) - math.log(tau2)
    itau = 1.0 / tau2
    c = phi * phi * itau * itau
    d = itau
    s = math.log(d)
    for _ in range(1, T - 1):
        d = (1.0 + phi * phi) * itau - c / d
        if not d > 0.0:
            return np.nan
        s += math.log(d)
    d = itau - c / d
    if not d > 0.0:
        return np.nan
    return s + math.log(d)


@njit(cache=True, nogil=True)
def loglik_many(w, phis, tau2s):
    """Gaussian AR(1) log-density of one series under each (phi, tau2) atom."""
    T = w.shape[0]
    out = np.empty(phis.shape[0])
    for j in range(phis.shape[0]):
        ld = log_det_precision(T, phis[j], tau2s[j])
        q = quad_form(w, phis[j], tau2s[j])
        out[j] = -0.5 * T * LOG_2PI + 0.5 * ld - 0.5 * q
    return out


@njit(cache=True, nogil=True)
def precision_matvec(V, phi, tau2):
    T, m = V.shape
    diag, off = precision_bands(T, phi, tau2)
    out = np.empty_like(V)
    for j in range(m):
        for t in range(T):
            acc = diag[t] * V[t, j]
            if t > 0:
                acc += off[t - 1] * V[t - 1, j]
            if t < T - 1:
                acc += off[t] * V[t + 1, j]
            out[t, j] = acc
    return out


@njit(cache=True, nogil=True)
def _chol_tridiag(diag, off):
    # lower bidiagonal factor: L[t,t] = ld[t], L[t+1,t] = ls[t]
    T = diag.shape[0]
    ld = np.empty(T)
    ls = np.empty(max(T - 1, 0))
    if not diag[0] > 0.0:
        return ld, ls, False
    ld[0] = math.sqrt(diag[0])
    for t in range(1, T):
        ls[t - 1] = off[t - 1] / ld[t - 1]
        piv = diag[t] - ls[t - 1] * ls[t - 1]
        if not piv > 0.0:
            return ld, ls, False
        ld[t] = math.sqrt(piv)
    return ld, ls, True


@njit(cache=True, nogil=True)
def marginal_solve(V, sigma2, phi, tau2):
    """Q^{-1} V with Q = sigma2 I + R, via Q^{-1} = (sigma2 R^{-1} + I)^{-1} R^{-1}."""
    T, m = V.shape
    diag, off = precision_bands(T, phi, tau2)
    rhs = precision_matvec(V, phi, tau2)
    adiag = 1.0 + sigma2 * diag
    aoff = sigma2 * off
    ld, ls, ok = _chol_tridiag(adiag, aoff)
    out = np.empty_like(V)
    if not ok:
        out[:] = np.nan
        return out
    for j in range(m):
        out[0, j] = rhs[0, j] / ld[0]
        for t in range(1, T):
            out[t, j] = (rhs[t, j] - ls[t - 1] * out[t - 1, j]) / ld[t]
        out[T - 1, j] = out[T - 1, j] / ld[T - 1]
        for t in range(T - 2, -1, -1):
            out[t, j] = (out[t, j] - ls[t] * out[t + 1, j]) / ld[t]
    return out


@njit(cache=True, nogil=True)
def sample_w(mu_raw, sigma2, phi, tau2, z):
    """Draw from N(P^{-1} mu_raw, P^{-1}), P = I/sigma2 + R^{-1}, given z ~ N(0, I)."""
    T = mu_raw.shape[0]
    diag, off = precision_bands(T, phi, tau2)
    for t in range(T):
        diag[t] += 1.0 / sigma2
    ld, ls, ok = _chol_tridiag(diag, off)
    b = np.empty(T)
    if not ok:
        b[:] = np.nan
        return b
    # forward: M a = mu
    b[0] = mu_raw[0] / ld[0]
    for t in range(1, T):
        b[t] = (mu_raw[t] - ls[t - 1] * b[t - 1]) / ld[t]
    for t in range(T):
        b[t] += z[t]
    # backward: M^T b = a + z
    b[T - 1] = b[T - 1] / ld[T - 1]
    for t in range(T - 2, -1, -1):
        b[t] = (b[t] - ls[t] * b[t + 1]) / ld[t]
    return b
