"""Compare the compiled and pure-numpy CSR kernels against a dense matvec.

    python3 benchmarks/bench_kernels.py [--sizes 128,512] [--sparsities 0,0.5,0.9] [--json out.json]

Timings are medians over ``--reps`` calls on a single BLAS thread; outputs of
every path are checked against the dense product before timing.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from mannprune import _pykernels
from mannprune.numeric import make_rng

try:
    from mannprune import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def median_us(fn, reps):
    for _ in range(10):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return statistics.median(times) / 1e3


def bench(n, sparsity, reps, seed=0):
    rng = make_rng(seed, n)
    m = rng.standard_normal((n, n)).astype(np.float32)
    m[rng.random(m.shape) < sparsity] = 0
    x = rng.standard_normal(n).astype(np.float32)
    want = m @ x
    row = {"n": n, "sparsity": sparsity, "nnz": int(np.count_nonzero(m)),
           "dense_matvec_us": median_us(lambda: m @ x, reps)}
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    for name, k in backends.items():
        offs, cols, vals = k.csr_from_dense(m, 0.0)
        out = np.empty(n, dtype=np.float32)
        k.csr_matvec(offs, cols, vals, x, out)
        err = float(np.max(np.abs(out - want)))
        if err > 1e-4:
            raise SystemExit(f"{name} kernel disagrees with dense product by {err:g}")
        row[f"{name}_build_us"] = median_us(lambda: k.csr_from_dense(m, 0.0), max(reps // 10, 5))
        row[f"{name}_matvec_us"] = median_us(
            lambda: k.csr_matvec(offs, cols, vals, x, out), reps)
    if "cython_matvec_us" in row:
        row["cython_vs_python"] = row["python_matvec_us"] / row["cython_matvec_us"]
        row["cython_vs_dense"] = row["dense_matvec_us"] / row["cython_matvec_us"]
    return row


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="64,128,512")
    p.add_argument("--sparsities", default="0,0.5,0.9,0.99")
    p.add_argument("--reps", type=int, default=300)
    p.add_argument("--json", help="also write rows to this file")
    args = p.parse_args(argv)
    rows = []
    with threadpool_limits(1):
        for n in (int(v) for v in args.sizes.split(",")):
            for s in (float(v) for v in args.sparsities.split(",")):
                rows.append(bench(n, s, args.reps))
    cols = ["n", "sparsity", "nnz", "dense_matvec_us", "python_matvec_us", "cython_matvec_us",
            "cython_vs_python", "cython_vs_dense"]
    print("  ".join(f"{c:>16s}" for c in cols))
    for r in rows:
        print("  ".join(f"{r.get(c, float('nan')):>16.3f}" if isinstance(r.get(c), float)
                        else f"{r.get(c, '-')!s:>16s}" for c in cols))
    if _ckernels is None:
        print("compiled extension not available; python backend only", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
