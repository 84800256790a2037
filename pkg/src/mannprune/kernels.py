"""Kernel backend selection.

The compiled Cython extension is preferred; the numpy fallback is used when it
failed to build or when ``MANNPRUNE_PURE_PYTHON`` is set to a truthy value.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MANNPRUNE_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

csr_from_dense = _impl.csr_from_dense
csr_matvec = _impl.csr_matvec

__all__ = ["BACKEND", "csr_from_dense", "csr_matvec"]
