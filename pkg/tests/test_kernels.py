"""The compiled and numpy kernel backends must agree."""
import numpy as np
import pytest

from mannprune import _pykernels, kernels
from mannprune.numeric import make_rng

try:
    from mannprune import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _sparse(rng, shape, density, dtype):
    a = rng.standard_normal(shape).astype(dtype)
    a[rng.random(shape) >= density] = 0
    return a


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("density", [0.0, 0.1, 0.5, 1.0])
def test_csr_from_dense_backends_agree(dtype, density):
    a = _sparse(make_rng(0), (17, 23), density, dtype)
    for got, want in zip(_ckernels.csr_from_dense(a, 0.0), _pykernels.csr_from_dense(a, 0.0)):
        np.testing.assert_array_equal(np.asarray(got), want)


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("density", [0.0, 0.1, 0.5, 1.0])
def test_csr_matvec_backends_agree(dtype, density):
    rng = make_rng(1)
    a = _sparse(rng, (31, 19), density, dtype)
    x = rng.standard_normal(19).astype(dtype)
    offs, cols, vals = _pykernels.csr_from_dense(a, 0.0)
    out_c = np.empty(31, dtype=dtype)
    out_p = np.empty(31, dtype=dtype)
    _ckernels.csr_matvec(offs, cols, vals, x, out_c)
    _pykernels.csr_matvec(offs, cols, vals, x, out_p)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(out_c, out_p, atol=tol)
    np.testing.assert_allclose(out_c, a.astype(np.float64) @ x, atol=tol)


def test_pure_python_fallback_selected_by_env(monkeypatch):
    import importlib

    monkeypatch.setenv("MANNPRUNE_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.csr_matvec is _pykernels.csr_matvec
    finally:
        monkeypatch.delenv("MANNPRUNE_PURE_PYTHON")
        importlib.reload(kernels)
