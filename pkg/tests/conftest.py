"""Shared fixtures and dense-matrix oracles.

The oracles build R(phi, tau2) directly from the stationary AR(1)
autocovariance, independently of the tridiagonal code paths.
"""
import math

import numpy as np
import pytest

from sppm._kernels import _numpy

try:
    from sppm._kernels import _numba
except ImportError:  # pragma: no cover
    _numba = None

BACKENDS = [pytest.param(_numpy, id="numpy")]
if _numba is not None:
    BACKENDS.append(pytest.param(_numba, id="numba"))


@pytest.fixture(params=BACKENDS)
def kern(request):
    return request.param


def dense_cov(T, phi, tau2):
    lags = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    return tau2 / (1.0 - phi ** 2) * phi ** lags


def dense_prec(T, phi, tau2):
    return np.linalg.inv(dense_cov(T, phi, tau2))


def dense_logdet_prec(T, phi, tau2):
    return -np.linalg.slogdet(dense_cov(T, phi, tau2))[1]


def dense_quad(w, phi, tau2):
    R = dense_cov(len(w), phi, tau2)
    return float(w @ np.linalg.solve(R, w))


def dense_loglik(w, phi, tau2):
    T = len(w)
    return -0.5 * T * math.log(2 * math.pi) + 0.5 * dense_logdet_prec(T, phi, tau2) \
        - 0.5 * dense_quad(w, phi, tau2)


def dense_marginal_solve(v, sigma2, phi, tau2):
    Q = sigma2 * np.eye(len(v)) + dense_cov(len(v), phi, tau2)
    return np.linalg.solve(Q, v)


def dense_w_posterior(mu_raw, sigma2, phi, tau2):
    """Mean and covariance of w | rest with V^{-1} = I / sigma2 + R^{-1}."""
    T = len(mu_raw)
    V = np.linalg.inv(np.eye(T) / sigma2 + np.linalg.inv(dense_cov(T, phi, tau2)))
    return V @ mu_raw, V


def random_params(rng):
    return float(rng.uniform(0.01, 0.98)), float(np.exp(rng.uniform(-2, 2)))


def rel_err(a, b):
    """Normwise relative error of ``a`` against the reference ``b``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# --- NIW oracles ------------------------------------------------------------

def niw_post(points, mu0, kappa0, nu0, Lam0):
    """Textbook NIW update, written out independently of the package."""
    X = np.asarray(points, float).reshape(-1, 2)
    n = X.shape[0]
    xbar = X.mean(axis=0)
    S = (X - xbar).T @ (X - xbar)
    kn = kappa0 + n
    mun = (kappa0 * np.asarray(mu0) + n * xbar) / kn
    Lamn = np.asarray(Lam0) + S + kappa0 * n / kn * np.outer(xbar - mu0, xbar - mu0)
    return mun, kn, nu0 + n, Lamn


def student_t_chain(points, mu0, kappa0, nu0, Lam0):
    """log p(s_1..s_n) as a product of NIW posterior-predictive Student-t densities."""
    from scipy.stats import multivariate_t

    X = np.asarray(points, float).reshape(-1, 2)
    mu, k, nu, Lam = np.asarray(mu0, float), kappa0, nu0, np.asarray(Lam0, float)
    total = 0.0
    for j in range(X.shape[0]):
        df = nu - 2 + 1
        shape = Lam * (k + 1) / (k * df)
        total += multivariate_t(loc=mu, shape=shape, df=df).logpdf(X[j])
        mu, k, nu, Lam = niw_post(X[: j + 1], mu0, kappa0, nu0, Lam0)
    return float(total)


def niw_mc_ratio(points, mu0, kappa0, nu0, Lam0, log_ref, N, rng, batch=200_000):
    """Monte-Carlo integral of prod_j N(s_j | mu, Sigma) over (mu, Sigma) ~ NIW.

    Returns the mean and standard error of exp(log f - log_ref), which should
    be 1 when ``log_ref`` is the exact log integral.
    """
    from scipy.stats import invwishart

    X = np.asarray(points, float).reshape(-1, 2)
    vals = []
    done = 0
    while done < N:
        m = min(batch, N - done)
        Sig = invwishart(df=nu0, scale=np.asarray(Lam0)).rvs(size=m, random_state=rng)
        Sig = Sig.reshape(m, 2, 2)
        Lc = np.linalg.cholesky(Sig / kappa0)
        mu = np.asarray(mu0) + np.einsum("mij,mj->mi", Lc, rng.standard_normal((m, 2)))
        det = Sig[:, 0, 0] * Sig[:, 1, 1] - Sig[:, 0, 1] ** 2
        inv = np.stack([np.stack([Sig[:, 1, 1], -Sig[:, 0, 1]], -1),
                        np.stack([-Sig[:, 1, 0], Sig[:, 0, 0]], -1)], 1) / det[:, None, None]
        logf = np.zeros(m)
        for x in X:
            d = x - mu
            q = np.einsum("mi,mij,mj->m", d, inv, d)
            logf += -math.log(2 * math.pi) - 0.5 * np.log(det) - 0.5 * q
        vals.append(np.exp(logf - log_ref))
        done += m
    r = np.concatenate(vals)
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(N))
