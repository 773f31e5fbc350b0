"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``OSTL_PURE_PYTHON=1`` to force the numpy path.  Both paths evaluate the
same IEEE operations in the same order and give bit-identical results.
"""

import os

import numpy as np


def adam_update_numpy(p, g, m, v, beta1, beta2, step_size, sqrt_bc2, eps):
    s = np.multiply(g, 1.0 - beta1)
    m *= beta1
    m += s
    np.multiply(g, g, out=s)
    s *= 1.0 - beta2
    v *= beta2
    v += s
    np.sqrt(v, out=s)
    s /= sqrt_bc2
    s += eps
    np.divide(m, s, out=s)
    s *= step_size
    p -= s


try:
    if os.environ.get("OSTL_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from ._kernels import adam_update as _adam_update_c
    BACKEND = "compiled"
except ImportError:
    _adam_update_c = None
    BACKEND = "numpy"


def _flat(a):
    return a.reshape(-1) if a.flags.c_contiguous and a.dtype == np.float64 else None


def adam_update(p, g, m, v, beta1, beta2, step_size, sqrt_bc2, eps):
    """In-place Adam moment and parameter update for one array."""
    if _adam_update_c is not None:
        flats = [_flat(a) for a in (p, m, v)]
        gf = np.ascontiguousarray(g, dtype=np.float64).reshape(-1)
        if all(f is not None for f in flats):
            _adam_update_c(flats[0], gf, flats[1], flats[2], beta1, beta2, step_size, sqrt_bc2, eps)
            return
    adam_update_numpy(p, g, m, v, beta1, beta2, step_size, sqrt_bc2, eps)
