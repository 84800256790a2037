"""Dense/sparse linear algebra, activations and seeded random streams.

Dense matrices are plain row-major numpy arrays (float32 for stored
parameters, float64 for gradient checking). Sparse matrices use CSR.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError

PARAM_DTYPE = np.float32
CHECK_DTYPE = np.float64


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-major matrix product; accumulates in the operands' precision."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def elu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    # clamp before exp so the discarded branch never overflows
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def elu_grad_from_output(z: np.ndarray) -> np.ndarray:
    """Derivative of ELU expressed through its output ``z``."""
    return np.where(z > 0, 1.0, z + 1.0).astype(z.dtype, copy=False)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class CsrMatrix:
    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_dense(cls, m: np.ndarray, zero_tol: float = 0.0) -> "CsrMatrix":
        return csr_from_dense(m, zero_tol)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=self.values.dtype)
        row_ids = np.repeat(np.arange(self.rows), np.diff(self.row_offsets))
        out[row_ids, self.col_indices] = self.values
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return csr_matvec(self, x)


def csr_from_dense(m: np.ndarray, zero_tol: float = 0.0) -> CsrMatrix:
    """Compress ``m``, dropping entries with ``|v| <= zero_tol``."""
    if zero_tol < 0:
        raise ValueError("zero_tol must be >= 0")
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"csr_from_dense expects a matrix, got shape {m.shape}")
    if m.dtype not in (np.float32, np.float64):
        m = m.astype(np.float64)
    offsets, cols, vals = kernels.csr_from_dense(np.ascontiguousarray(m), float(zero_tol))
    return CsrMatrix(m.shape[0], m.shape[1], np.asarray(offsets), np.asarray(cols), np.asarray(vals))


def csr_matvec(m: CsrMatrix, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=m.values.dtype)
    if x.ndim != 1 or x.shape[0] != m.cols:
        raise ShapeError(f"csr_matvec: matrix {m.shape} cannot multiply vector {x.shape}")
    out = np.empty(m.rows, dtype=m.values.dtype)
    kernels.csr_matvec(m.row_offsets, m.col_indices, m.values, x, out)
    return out


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator; ``stream`` selects an independent substream.

    Philox's output for a given key is fixed by its algorithm, so the same
    ``(seed, *stream)`` reproduces the same draws on any platform.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))
