"""Backend selection for the AR(1) kernels.

The numba backend is used when numba imports cleanly, unless the
environment variable ``SPPM_DISABLE_NUMBA`` is set to a truthy value, in
which case the numpy/scipy backend is used. Both backends expose the same
functions and are importable directly for benchmarking.
"""
import os

from . import _numpy

_disabled = os.environ.get("SPPM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

if _disabled:
    backend = _numpy
    NUMBA_AVAILABLE = False
else:
    try:
        from . import _numba
    except ImportError:  # pragma: no cover - numba missing
        backend = _numpy
        NUMBA_AVAILABLE = False
    else:
        backend = _numba
        NUMBA_AVAILABLE = True

BACKEND_NAME = "numba" if backend is not _numpy else "numpy"

precision_bands = backend.precision_bands
quad_form = backend.quad_form
quad_form_sum = backend.quad_form_sum
log_det_precision = backend.log_det_precision
loglik_many = backend.loglik_many
precision_matvec = backend.precision_matvec
marginal_solve = backend.marginal_solve
sample_w = backend.sample_w

__all__ = [
    "BACKEND_NAME",
    "NUMBA_AVAILABLE",
    "backend",
    "precision_bands",
    "quad_form",
    "quad_form_sum",
    "log_det_precision",
    "loglik_many",
    "precision_matvec",
    "marginal_solve",
    "sample_w",
]
