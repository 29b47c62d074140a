"""Exact O(T) linear algebra for the stationary AR(1) latent process.

A series ``w`` of length T with ``w_t = phi * w_{t-1} + nu_t``,
``nu_t ~ N(0, tau2)`` started from its stationary law has covariance
``R[t, s] = tau2 / (1 - phi^2) * phi^|t-s|`` and a tridiagonal inverse.
Every routine below works on that tridiagonal structure directly.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels as K


class InvalidParameterError(ValueError):
    """Raised when AR(1) parameters or kernel inputs are unusable."""


# proposals for phi outside this band are rejected by the sampler
PHI_GUARD = (1e-8, 1.0 - 1e-8)


@dataclass(frozen=True)
class Ar1Params:
    phi: float
    tau2: float

    def __post_init__(self):
        if not (0.0 < self.phi < 1.0):
            raise InvalidParameterError(f"phi must lie in (0, 1), got {self.phi!r}")
        if not (self.tau2 > 0.0 and np.isfinite(self.tau2)):
            raise InvalidParameterError(f"tau2 must be positive and finite, got {self.tau2!r}")


@dataclass(frozen=True)
class TridiagPrecision:
    diag: np.ndarray
    off: np.ndarray

    def to_dense(self):
        T = self.diag.shape[0]
        out = np.diag(self.diag)
        if T > 1:
            out += np.diag(self.off, 1) + np.diag(self.off, -1)
        return out


def _vector(x, name="w"):
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] < 1:
        raise InvalidParameterError(f"{name} must be a non-empty 1-d array")
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError(f"{name} contains non-finite values")
    return x


def _positive(x, name):
    if not (x > 0.0 and np.isfinite(x)):
        raise InvalidParameterError(f"{name} must be positive and finite, got {x!r}")
    return float(x)


def precision(T, p):
    """Tridiagonal representation of R(phi, tau2)^{-1}."""
    if T < 1:
        raise InvalidParameterError("T must be >= 1")
    diag, off = K.precision_bands(int(T), p.phi, p.tau2)
    return TridiagPrecision(diag, off)


def quad_form(w, p):
    """``w' R^{-1} w`` in O(T)."""
    return float(K.quad_form(_vector(w), p.phi, p.tau2))


def log_det_precision(T, p):
    """``log |R^{-1}|`` via the Cholesky pivot recursion."""
    if T < 1:
        raise InvalidParameterError("T must be >= 1")
    val = K.log_det_precision(int(T), p.phi, p.tau2)
    if not np.isfinite(val):
        raise InvalidParameterError(f"non-positive Cholesky pivot for phi={p.phi}, tau2={p.tau2}")
    return float(val)


def loglik_w(w, p):
    """Log-density of ``w`` under N_T(0, R(phi, tau2))."""
    w = _vector(w)
    val = K.loglik_many(w, np.array([p.phi]), np.array([p.tau2]))[0]
    if not np.isfinite(val):
        raise InvalidParameterError(f"log-density is not finite for phi={p.phi}, tau2={p.tau2}")
    return float(val)


def sample_w(mu_raw, sigma2, p, rng):
    """Draw ``w ~ N(V mu_raw, V)`` with ``V^{-1} = I / sigma2 + R^{-1}``.

    ``mu_raw`` is ``(y - Z beta) / sigma2``. One vector of standard normals
    is consumed from ``rng``.
    """
    mu_raw = _vector(mu_raw, "mu_raw")
    sigma2 = _positive(sigma2, "sigma2")
    z = rng.standard_normal(mu_raw.shape[0])
    out = K.sample_w(mu_raw, sigma2, p.phi, p.tau2, z)
    if not np.all(np.isfinite(out)):
        raise InvalidParameterError("Cholesky breakdown in the w full conditional")
    return out


def marginal_solve(v, sigma2, p):
    """``Q^{-1} v`` for ``Q = sigma2 I + R``; ``v`` may be 1-d or (T, m)."""
    v = np.asarray(v, dtype=float)
    if v.ndim not in (1, 2) or v.shape[0] < 1:
        raise InvalidParameterError("v must be a (T,) or (T, m) array")
    if not np.all(np.isfinite(v)):
        raise InvalidParameterError("v contains non-finite values")
    sigma2 = _positive(sigma2, "sigma2")
    V = np.ascontiguousarray(v.reshape(v.shape[0], -1))
    out = K.marginal_solve(V, sigma2, p.phi, p.tau2)
    if not np.all(np.isfinite(out)):
        raise InvalidParameterError("tridiagonal solver breakdown")
    return out.reshape(v.shape)


def stationary_covariance(T, p):
    """Dense R(phi, tau2); O(T^2), meant for small T and checks."""
    lags = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    return p.tau2 / (1.0 - p.phi ** 2) * p.phi ** lags
