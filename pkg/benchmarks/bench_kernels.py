"""Benchmark the numba kernels against their pure-numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py [--n 5000] [--dim 32] [--repeats 5]

The same comparison can be forced package-wide at runtime with
HYPRET_DISABLE_NUMBA=1, which routes every kernel through the numpy path.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from hypret import _hnsw as hnsw
from hypret import _kernels as K


def timeit(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_distance_matrix(n, dim, repeats):
    rng = np.random.default_rng(0)
    Q = np.ascontiguousarray(rng.normal(size=(256, dim)))
    X = np.ascontiguousarray(rng.normal(size=(n, dim)))
    if K.NUMBA_AVAILABLE:
        out = np.empty((Q.shape[0], X.shape[0]))
        K._tangent_distance_matrix_nb(Q, X, out)  # compile
        t_nb, _ = timeit(lambda: K._tangent_distance_matrix_nb(Q, X, out), repeats)
    else:
        t_nb = None
    t_np, ref = timeit(lambda: K.tangent_distance_matrix_np(Q, X), repeats)
    if t_nb is not None:
        assert np.allclose(out, ref, atol=1e-10)
    return "tangent_distance_matrix", t_nb, t_np


def bench_hier_epoch(n, dim, repeats):
    rng = np.random.default_rng(1)
    n_edges = n
    parents = rng.integers(0, n, size=n_edges).astype(np.int64)
    children = rng.integers(0, n, size=n_edges).astype(np.int64)
    negs = rng.integers(0, n, size=(n_edges, 5)).astype(np.int64)
    gn = np.zeros(n_edges)

    def run_nb():
        U = rng_state["U_nb"].copy()
        return K._hier_epoch_nb(U, parents, children, negs, 0.1, 0.05, 3.0, True, gn)

    def run_np():
        U = rng_state["U_np"].copy()
        return K._hier_epoch_np(U, parents, children, negs, 0.1, 0.05, 3.0, True, gn)

    rng_state = {"U_nb": rng.normal(scale=0.1, size=(n, dim)), "U_np": None}
    rng_state["U_np"] = rng_state["U_nb"].copy()
    t_nb = None
    if K.NUMBA_AVAILABLE:
        run_nb()  # compile
        t_nb, _ = timeit(run_nb, repeats)
    t_np, _ = timeit(run_np, max(1, repeats // 2))
    return "hier_epoch", t_nb, t_np


def bench_text_epoch(n, dim, repeats):
    rng = np.random.default_rng(2)
    de = 128
    E = rng.normal(size=(n, de))
    rows = np.arange(n, dtype=np.int64)
    gn = np.zeros(n)
    U0 = rng.normal(scale=0.1, size=(n, dim))
    W0 = rng.normal(scale=0.01, size=(dim, de))
    b0 = np.zeros(dim)

    def run_nb():
        U, W, b = U0.copy(), W0.copy(), b0.copy()
        return K._text_epoch_linear_nb(U, E, rows, W, b, 1.0, 0.05, 3.0, True, gn)

    def run_np():
        U, W, b = U0.copy(), W0.copy(), b0.copy()
        return K._text_epoch_linear_np(U, E, rows, W, b, 1.0, 0.05, 3.0, True, gn)

    t_nb = None
    if K.NUMBA_AVAILABLE:
        run_nb()
        t_nb, _ = timeit(run_nb, repeats)
    t_np, _ = timeit(run_np, max(1, repeats // 2))
    return "text_epoch_linear", t_nb, t_np


def bench_hnsw_build(n, dim, repeats):
    # the python fallback is much slower, so both paths run at a reduced size
    n = min(n, 1500)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(n, dim)).astype(np.float32)
    levels = hnsw.draw_levels(n, seed=0)
    M, M0, efc = 16, 32, 200
    n_upper = max(1, int(levels.max()))

    def make():
        return (
            np.zeros((n, M0), np.int32),
            np.zeros(n, np.int32),
            np.zeros((n_upper, n, M), np.int32),
            np.zeros((n_upper, n), np.int32),
        )

    t_nb = None
    if K.NUMBA_AVAILABLE:
        hnsw.hnsw_build_nb(X[:64], levels[:64], M, M0, efc, *make())  # compile
        t_nb, _ = timeit(lambda: hnsw.hnsw_build_nb(X, levels, M, M0, efc, *make()), max(1, repeats // 2))
    t_np, _ = timeit(lambda: hnsw.hnsw_build_np(X, levels, M, M0, efc, *make()), 1)
    return f"hnsw_build (n={n})", t_nb, t_np


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    print(f"numba available: {K.NUMBA_AVAILABLE} | env-disabled: {K.NUMBA_DISABLED} | n={args.n} dim={args.dim}")
    print(f"{'kernel':<34} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for bench in (bench_distance_matrix, bench_hier_epoch, bench_text_epoch, bench_hnsw_build):
        name, t_nb, t_np = bench(args.n, args.dim, args.repeats)
        nb_s = f"{t_nb*1e3:9.1f}ms" if t_nb is not None else "       --"
        ratio = f"{t_np/t_nb:7.1f}x" if t_nb else "      --"
        print(f"{name:<34} {nb_s} {t_np*1e3:9.1f}ms {ratio}")


if __name__ == "__main__":
    main()
