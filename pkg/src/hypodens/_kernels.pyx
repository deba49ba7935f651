# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Euler-Maruyama stepping for polynomial models.

Consumes the packed monomial tables of hypodens._fallback.PackedTables and
mirrors its per-step operation order, so both backends produce matching
trajectories up to floating-point roundoff.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _eval_term(double coef, int tpow, const int[:, ::1] xpows,
                              Py_ssize_t k, double t, const double* x, int n) nogil:
    cdef double v = coef
    cdef int q, i, p
    for q in range(tpow):
        v *= t
    for i in range(n):
        p = xpows[k, i]
        for q in range(p):
            v *= x[i]
    return v


def sde_endpoints(const double[:, :, ::1] dw, const double[::1] x0, double delta,
                  const double[::1] coefs, const int[::1] tpows,
                  const int[:, ::1] xpows, const int[::1] offsets,
                  int n, int d):
    """Endpoint states after Euler-Maruyama over dw; returns (B, n) array."""
    cdef Py_ssize_t B = dw.shape[0]
    cdef Py_ssize_t n_steps = dw.shape[1]
    cdef double h = delta / n_steps
    out_arr = np.empty((B, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[64] x
    cdef double[64] upd
    cdef double acc, t, dwj
    cdef Py_ssize_t b, s, k
    cdef int a, j, idx
    if n > 64:
        raise ValueError("state dimension above compiled kernel limit (64)")
    with nogil:
        for b in range(B):
            for a in range(n):
                x[a] = x0[a]
            t = 0.0
            for s in range(n_steps):
                for a in range(n):
                    acc = 0.0
                    for k in range(offsets[a], offsets[a + 1]):
                        acc += _eval_term(coefs[k], tpows[k], xpows, k, t, &x[0], n)
                    upd[a] = acc * h
                for j in range(d):
                    dwj = dw[b, s, j]
                    for a in range(n):
                        idx = (1 + j) * n + a
                        if offsets[idx] != offsets[idx + 1]:
                            acc = 0.0
                            for k in range(offsets[idx], offsets[idx + 1]):
                                acc += _eval_term(coefs[k], tpows[k], xpows, k, t,
                                                  &x[0], n)
                            upd[a] += acc * dwj
                for a in range(n):
                    x[a] += upd[a]
                t += h
            for a in range(n):
                out[b, a] = x[a]
    return out_arr
