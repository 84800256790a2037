"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable, or when
``MANNPRUNE_PURE_PYTHON=1`` is set. Signatures match ``_ckernels``.
"""
import numpy as np


def csr_from_dense(m, zero_tol):
    m = np.ascontiguousarray(m)
    keep = np.abs(m) > zero_tol
    counts = keep.sum(axis=1)
    row_offsets = np.zeros(m.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])
    rows, cols = np.nonzero(keep)
    return row_offsets, cols.astype(np.int64), m[rows, cols].copy()


def csr_matvec(row_offsets, col_indices, values, x, out):
    n_rows = out.shape[0]
    out[:] = 0
    if values.shape[0] == 0:
        return out
    prods = values * x[col_indices]
    row_ids = np.repeat(np.arange(n_rows), np.diff(row_offsets))
    # bincount accumulates in f64; cast back to the output dtype
    out[:] = np.bincount(row_ids, weights=prods, minlength=n_rows)
    return out
