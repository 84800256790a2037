# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

ctypedef fused floating_t:
    float
    double


def csr_from_dense(floating_t[:, ::1] m, double zero_tol):
    cdef Py_ssize_t n_rows = m.shape[0], n_cols = m.shape[1]
    cdef Py_ssize_t i, j, k = 0, nnz = 0
    for i in range(n_rows):
        for j in range(n_cols):
            if fabs(m[i, j]) > zero_tol:
                nnz += 1
    dtype = np.float32 if floating_t is float else np.float64
    row_offsets_arr = np.empty(n_rows + 1, dtype=np.int64)
    col_arr = np.empty(nnz, dtype=np.int64)
    val_arr = np.empty(nnz, dtype=dtype)
    cdef cnp.int64_t[::1] row_offsets = row_offsets_arr
    cdef cnp.int64_t[::1] cols = col_arr
    cdef floating_t[::1] vals = val_arr
    row_offsets[0] = 0
    for i in range(n_rows):
        for j in range(n_cols):
            if fabs(m[i, j]) > zero_tol:
                cols[k] = j
                vals[k] = m[i, j]
                k += 1
        row_offsets[i + 1] = k
    return row_offsets_arr, col_arr, val_arr


def csr_matvec(const cnp.int64_t[::1] row_offsets,
               const cnp.int64_t[::1] col_indices,
               const floating_t[::1] values,
               const floating_t[::1] x,
               floating_t[::1] out):
    cdef Py_ssize_t i, k, start, stop, n_rows = out.shape[0]
    cdef floating_t a0, a1, a2, a3
    with nogil:
        for i in range(n_rows):
            # four independent accumulators hide the add latency chain
            a0 = a1 = a2 = a3 = 0
            start = row_offsets[i]
            stop = row_offsets[i + 1]
            k = start
            while k + 4 <= stop:
                a0 = a0 + values[k] * x[col_indices[k]]
                a1 = a1 + values[k + 1] * x[col_indices[k + 1]]
                a2 = a2 + values[k + 2] * x[col_indices[k + 2]]
                a3 = a3 + values[k + 3] * x[col_indices[k + 3]]
                k += 4
            while k < stop:
                a0 = a0 + values[k] * x[col_indices[k]]
                k += 1
            out[i] = (a0 + a1) + (a2 + a3)
    return np.asarray(out)
