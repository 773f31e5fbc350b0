# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ostl._backend for the pure-Python equivalents."""

from libc.math cimport sqrt


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double beta1, double beta2, double step_size, double sqrt_bc2, double eps):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, d
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_update: length mismatch")
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = m[i] * beta1 + c1 * gi
            v[i] = v[i] * beta2 + (gi * gi) * c2
            d = sqrt(v[i]) / sqrt_bc2 + eps
            p[i] = p[i] - (m[i] / d) * step_size
