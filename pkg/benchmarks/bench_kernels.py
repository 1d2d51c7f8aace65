"""Time each hot kernel under the numba and numpy backends.

Usage: python benchmarks/bench_kernels.py [--nodes 5000] [--repeat 5]

The first numba call (compilation) is excluded from the timings.
"""
import argparse
import time

import numpy as np

from evolve_gnn import kernels
from evolve_gnn.synthetic import generate_synthetic_stream


def best_of(fn, repeat):
    fn()  # warm up / compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def attention_csr(indptr, indices):
    n = indptr.size - 1
    deg = np.diff(indptr)
    ptr = np.concatenate([[0], np.cumsum(deg + 1)]).astype(np.int64)
    rows = np.repeat(np.arange(n), deg + 1)
    src = np.empty(ptr[-1], dtype=np.int64)
    first = ptr[:-1]
    src[first] = np.arange(n)
    mask = np.ones(src.size, bool)
    mask[first] = False
    src[mask] = indices
    return ptr, src, rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=5000)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    g = generate_synthetic_stream(n_nodes=args.nodes, seed=0)
    rng = np.random.default_rng(0)
    indptr, indices, t = g.indptr, g.indices, g.node_time
    n, d = g.num_nodes, args.hidden
    h = rng.standard_normal((n, d))
    ptr, src, _ = attention_csr(indptr, indices)
    heads = 8
    z = rng.standard_normal((n, heads * 8))
    scores = rng.standard_normal((src.size, heads))
    a = rng.standard_normal((n, 2 * d))
    w = rng.standard_normal((2 * d, 12))

    cases = {
        "khop_time_diff_counts k=2": lambda k: k["khop_time_diff_counts"](indptr, indices, t, 2),
        "csr_row_mean": lambda k: k["csr_row_mean"](indptr, indices, h),
        "csr_row_mean_backward": lambda k: k["csr_row_mean_backward"](indptr, indices, h, n),
        "segment_softmax": lambda k: k["segment_softmax"](scores, ptr),
        "attention_aggregate": lambda k: k["attention_aggregate"](z, scores, ptr, src, heads),
        "column_stable_matmul": lambda k: k["column_stable_matmul"](a, w),
    }
    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    print(f"{n} nodes, {g.num_edges} edges, hidden {d}")
    print(f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, call in cases.items():
        secs = [best_of(lambda: call(kernels.get_backend(b)), args.repeat) for b in backends]
        line = f"{name:<28}" + "".join(f"{s * 1e3:>10.2f}ms" for s in secs)
        if len(secs) == 2:
            line += f"{secs[0] / secs[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
