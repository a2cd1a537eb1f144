# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled decode-loop kernels.

Same contracts as ``_kernels_py``: single-query attention plus the packed-
row reconstruction fills. fp32 storage, fp64 accumulation in reductions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def attend(float[::1] q, float[:, ::1] K, float[:, ::1] V):
    cdef Py_ssize_t S = K.shape[0]
    cdef Py_ssize_t D = K.shape[1]
    cdef double inv = 1.0 / sqrt(<double> D)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] logits = np.empty(S, dtype=np.float64)
    cdef double[::1] lg = logits
    cdef Py_ssize_t t, j
    cdef double acc, peak, total, wt

    for t in range(S):
        acc = 0.0
        for j in range(D):
            acc += (<double> q[j]) * (<double> K[t, j])
        lg[t] = acc * inv

    peak = lg[0]
    for t in range(1, S):
        if lg[t] > peak:
            peak = lg[t]
    total = 0.0
    for t in range(S):
        lg[t] = exp(lg[t] - peak)
        total += lg[t]

    cdef cnp.ndarray[cnp.float32_t, ndim=1] weights = np.empty(S, dtype=np.float32)
    cdef float[::1] w = weights
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out64 = np.zeros(D, dtype=np.float64)
    cdef double[::1] o = out64
    for t in range(S):
        w[t] = <float> (lg[t] / total)
        wt = <double> w[t]
        for j in range(D):
            o[j] += wt * (<double> V[t, j])
    return weights, out64.astype(np.float32)


def scatter_rows(cnp.int64_t[::1] offsets, cnp.int32_t[::1] indices,
                 float[::1] values, Py_ssize_t ncols):
    cdef Py_ssize_t S = offsets.shape[0] - 1
    cdef cnp.ndarray[cnp.float32_t, ndim=2] out = np.zeros((S, ncols), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef Py_ssize_t t, k
    for t in range(S):
        for k in range(offsets[t], offsets[t + 1]):
            o[t, indices[k]] = values[k]
    return out


def fill_rowconst(cnp.int64_t[::1] offsets, cnp.int32_t[::1] indices,
                  float[::1] values, Py_ssize_t ncols,
                  float[::1] row_fill, float[::1] denom):
    cdef Py_ssize_t S = offsets.shape[0] - 1
    cdef cnp.ndarray[cnp.float32_t, ndim=2] out = np.empty((S, ncols), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef Py_ssize_t t, j, k, end
    for t in range(S):
        k = offsets[t]
        end = offsets[t + 1]
        for j in range(ncols):
            if k < end and indices[k] == j:
                o[t, j] = values[k]
                k += 1
            else:
                o[t, j] = row_fill[t] / denom[j]
    return out


def fill_flat(cnp.int64_t[::1] offsets, cnp.int32_t[::1] indices,
              float[::1] values, Py_ssize_t ncols,
              float[::1] fill_values, float[::1] denom):
    cdef Py_ssize_t S = offsets.shape[0] - 1
    cdef cnp.ndarray[cnp.float32_t, ndim=2] out = np.empty((S, ncols), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef Py_ssize_t t, j, k, end
    cdef Py_ssize_t pos = 0  # row-major pruned order
    for t in range(S):
        k = offsets[t]
        end = offsets[t + 1]
        for j in range(ncols):
            if k < end and indices[k] == j:
                o[t, j] = values[k]
                k += 1
            else:
                o[t, j] = fill_values[pos] / denom[j]
                pos += 1
    return out
