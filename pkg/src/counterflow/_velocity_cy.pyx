# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled mixture-velocity kernel; same algebra as _velocity_py.

The per-latent loop runs without the GIL, so thread pools get real
parallelism out of this path.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def mixture_velocity(object means, object variances, object log_weights, object z, double t):
    """Marginal flow velocity for a batch of flattened latents.

    means, variances: (components, dims); log_weights: (components,);
    z: (batch, dims).  Returns (batch, dims) float64.
    """
    cdef double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[:, ::1] s = np.ascontiguousarray(variances, dtype=np.float64)
    cdef double[::1] logw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)

    cdef Py_ssize_t C = mu.shape[0]
    cdef Py_ssize_t N = mu.shape[1]
    cdef Py_ssize_t B = zz.shape[0]

    out_arr = np.zeros((B, N), dtype=np.float64)
    a_arr = np.empty((C, N), dtype=np.float64)
    coef_arr = np.empty((C, N), dtype=np.float64)
    logdet_arr = np.empty(C, dtype=np.float64)
    loglik_arr = np.empty((B, C), dtype=np.float64)

    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] coef = coef_arr
    cdef double[::1] logdet = logdet_arr
    cdef double[:, ::1] loglik = loglik_arr

    cdef Py_ssize_t b, k, n
    cdef double one_t = 1.0 - t
    cdef double base = one_t * one_t
    cdef double tt = t * t
    cdef double diff, q, best, total, r

    with nogil:
        for k in range(C):
            logdet[k] = 0.0
            for n in range(N):
                a[k, n] = base + tt * s[k, n]
                coef[k, n] = (t * s[k, n] - one_t) / a[k, n]
                logdet[k] += log(a[k, n])

        for b in range(B):
            best = -1e308
            for k in range(C):
                q = 0.0
                for n in range(N):
                    diff = zz[b, n] - t * mu[k, n]
                    q += diff * diff / a[k, n]
                loglik[b, k] = logw[k] - 0.5 * (q + logdet[k])
                if loglik[b, k] > best:
                    best = loglik[b, k]
            total = 0.0
            for k in range(C):
                loglik[b, k] = exp(loglik[b, k] - best)
                total += loglik[b, k]
            for k in range(C):
                r = loglik[b, k] / total
                for n in range(N):
                    out[b, n] += r * (mu[k, n] + coef[k, n] * (zz[b, n] - t * mu[k, n]))

    return out_arr
