"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: ``<name>_numba`` (compiled with ``@njit``) and
``<name>_numpy``. The public ``<name>`` is bound to one of them at import
time. Set ``EVOLVE_GNN_NUMBA=0`` to force the numpy path; the numba path is
used by default whenever numba imports cleanly.

All CSR arguments follow the scipy convention: neighbors of row ``i`` are
``indices[indptr[i]:indptr[i + 1]]``.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _env_wants_numba() -> bool:
    flag = os.environ.get("EVOLVE_GNN_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_wants_numba()
BACKEND = "numba" if USE_NUMBA else "numpy"

# width of the column blocks used by the numpy column-stable matmul
_STABLE_BLOCK = 8


# ---------------------------------------------------------------------------
# k-hop time differences
# ---------------------------------------------------------------------------


@njit(cache=True)
def khop_time_diff_counts_numba(indptr, indices, times, k):
    n = indptr.shape[0] - 1
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    span = times.max() - times.min()
    counts = np.zeros(span + 1, dtype=np.int64)
    # visited[v] == u + 1 marks v as seen in the BFS rooted at u
    visited = np.zeros(n, dtype=np.int64)
    frontier = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    for u in range(n):
        stamp = u + 1
        visited[u] = stamp
        frontier[0] = u
        n_front = 1
        tu = times[u]
        for _ in range(k):
            n_next = 0
            for f in range(n_front):
                w = frontier[f]
                for e in range(indptr[w], indptr[w + 1]):
                    v = indices[e]
                    if visited[v] != stamp:
                        visited[v] = stamp
                        nxt[n_next] = v
                        n_next += 1
                        tv = times[v]
                        if tv <= tu:
                            counts[tu - tv] += 1
            if n_next == 0:
                break
            for f in range(n_next):
                frontier[f] = nxt[f]
            n_front = n_next
    return counts


def khop_time_diff_counts_numpy(indptr, indices, times, k, chunk=2048):
    n = indptr.shape[0] - 1
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    times = np.asarray(times, dtype=np.int64)
    span = int(times.max() - times.min())
    counts = np.zeros(span + 1, dtype=np.int64)
    adj = sp.csr_matrix(
        (np.ones(indices.shape[0], dtype=np.int8), indices, indptr), shape=(n, n)
    )
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        rows = np.arange(lo, hi)
        reach = sp.csr_matrix(
            (np.ones(hi - lo, dtype=np.int8), (rows - lo, rows)), shape=(hi - lo, n)
        )
        for _ in range(k):
            reach = reach + reach @ adj
            reach.data[:] = 1
        reach = reach.tocoo()
        u = reach.row + lo
        v = reach.col
        keep = (u != v) & (times[v] <= times[u])
        counts += np.bincount(times[u[keep]] - times[v[keep]], minlength=span + 1)
    return counts


# ---------------------------------------------------------------------------
# neighbor mean over CSR rows
# ---------------------------------------------------------------------------


@njit(cache=True)
def csr_row_mean_numba(indptr, indices, h):
    n = indptr.shape[0] - 1
    f = h.shape[1]
    out = np.zeros((n, f), dtype=h.dtype)
    for i in range(n):
        lo = indptr[i]
        hi = indptr[i + 1]
        if hi == lo:
            continue
        for e in range(lo, hi):
            j = indices[e]
            for c in range(f):
                out[i, c] += h[j, c]
        inv = 1.0 / (hi - lo)
        for c in range(f):
            out[i, c] *= inv
    return out


@njit(cache=True)
def csr_row_mean_backward_numba(indptr, indices, g, n_src):
    n = indptr.shape[0] - 1
    f = g.shape[1]
    out = np.zeros((n_src, f), dtype=g.dtype)
    for i in range(n):
        lo = indptr[i]
        hi = indptr[i + 1]
        if hi == lo:
            continue
        inv = 1.0 / (hi - lo)
        for e in range(lo, hi):
            j = indices[e]
            for c in range(f):
                out[j, c] += g[i, c] * inv
    return out


def _mean_matrix(indptr, indices, n_src):
    n = indptr.shape[0] - 1
    deg = np.diff(indptr)
    w = np.repeat(1.0 / np.maximum(deg, 1), deg)
    return sp.csr_matrix((w, indices, indptr), shape=(n, n_src))


def csr_row_mean_numpy(indptr, indices, h):
    return np.asarray(_mean_matrix(indptr, indices, h.shape[0]) @ h)


def csr_row_mean_backward_numpy(indptr, indices, g, n_src):
    return np.asarray(_mean_matrix(indptr, indices, n_src).T @ g)


# ---------------------------------------------------------------------------
# segment softmax / segment sum (edges grouped by destination)
# ---------------------------------------------------------------------------


@njit(cache=True)
def segment_softmax_numba(scores, indptr):
    n = indptr.shape[0] - 1
    heads = scores.shape[1]
    out = np.empty_like(scores)
    for i in range(n):
        lo = indptr[i]
        hi = indptr[i + 1]
        if hi == lo:
            continue
        for h in range(heads):
            m = scores[lo, h]
            for e in range(lo + 1, hi):
                if scores[e, h] > m:
                    m = scores[e, h]
            s = 0.0
            for e in range(lo, hi):
                x = np.exp(scores[e, h] - m)
                out[e, h] = x
                s += x
            for e in range(lo, hi):
                out[e, h] /= s
    return out


@njit(cache=True)
def segment_softmax_backward_numba(alpha, g, indptr):
    n = indptr.shape[0] - 1
    heads = alpha.shape[1]
    out = np.empty_like(alpha)
    for i in range(n):
        lo = indptr[i]
        hi = indptr[i + 1]
        for h in range(heads):
            dot = 0.0
            for e in range(lo, hi):
                dot += alpha[e, h] * g[e, h]
            for e in range(lo, hi):
                out[e, h] = alpha[e, h] * (g[e, h] - dot)
    return out


@njit(cache=True)
def segment_sum_numba(values, indptr):
    n = indptr.shape[0] - 1
    f = values.shape[1]
    out = np.zeros((n, f), dtype=values.dtype)
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            for c in range(f):
                out[i, c] += values[e, c]
    return out


def _segment_ids(indptr):
    return np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))


def segment_softmax_numpy(scores, indptr):
    n = indptr.shape[0] - 1
    seg = _segment_ids(indptr)
    nonempty = np.diff(indptr) > 0
    starts = indptr[:-1][nonempty]
    smax = np.zeros((n, scores.shape[1]))
    if starts.size:
        smax[nonempty] = np.maximum.reduceat(scores, starts, axis=0)
    ex = np.exp(scores - smax[seg])
    denom = segment_sum_numpy(ex, indptr)
    return ex / denom[seg]


def segment_softmax_backward_numpy(alpha, g, indptr):
    seg = _segment_ids(indptr)
    dot = segment_sum_numpy(alpha * g, indptr)
    return alpha * (g - dot[seg])


def segment_sum_numpy(values, indptr):
    n = indptr.shape[0] - 1
    out = np.zeros((n, values.shape[1]), dtype=values.dtype)
    nonempty = np.diff(indptr) > 0
    starts = indptr[:-1][nonempty]
    if starts.size:
        out[nonempty] = np.add.reduceat(values, starts, axis=0)
    return out


# ---------------------------------------------------------------------------
# scatter-add of rows (backward of a row gather)
# ---------------------------------------------------------------------------


@njit(cache=True)
def scatter_add_rows_numba(g, idx, n):
    f = g.shape[1]
    out = np.zeros((n, f), dtype=g.dtype)
    for e in range(idx.shape[0]):
        r = idx[e]
        for c in range(f):
            out[r, c] += g[e, c]
    return out


def scatter_add_rows_numpy(g, idx, n):
    out = np.zeros((n, g.shape[1]), dtype=g.dtype)
    np.add.at(out, idx, g)
    return out


# ---------------------------------------------------------------------------
# attention-weighted neighbor sum (fused gather, scale, segment sum)
# ---------------------------------------------------------------------------


@njit(cache=True)
def attention_aggregate_numba(z, alpha, indptr, src, heads):
    n = indptr.shape[0] - 1
    hf = z.shape[1]
    f = hf // heads
    out = np.zeros((n, hf), dtype=z.dtype)
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = src[e]
            for h in range(heads):
                a = alpha[e, h]
                base = h * f
                for c in range(base, base + f):
                    out[i, c] += a * z[j, c]
    return out


@njit(cache=True)
def attention_aggregate_backward_numba(z, alpha, g, indptr, src, heads):
    n = indptr.shape[0] - 1
    hf = z.shape[1]
    f = hf // heads
    gz = np.zeros_like(z)
    galpha = np.zeros_like(alpha)
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = src[e]
            for h in range(heads):
                a = alpha[e, h]
                base = h * f
                acc = 0.0
                for c in range(base, base + f):
                    gz[j, c] += a * g[i, c]
                    acc += z[j, c] * g[i, c]
                galpha[e, h] = acc
    return gz, galpha


def attention_aggregate_numpy(z, alpha, indptr, src, heads):
    e = src.shape[0]
    hf = z.shape[1]
    msg = (z[src].reshape(e, heads, hf // heads) * alpha[:, :, None]).reshape(e, hf)
    return segment_sum_numpy(msg, indptr)


def attention_aggregate_backward_numpy(z, alpha, g, indptr, src, heads):
    e = src.shape[0]
    n, hf = z.shape
    f = hf // heads
    g_edge = g[_segment_ids(indptr)].reshape(e, heads, f)
    galpha = (z[src].reshape(e, heads, f) * g_edge).sum(axis=2)
    gz = scatter_add_rows_numpy((g_edge * alpha[:, :, None]).reshape(e, hf), src, n)
    return gz, galpha


# ---------------------------------------------------------------------------
# dense matmul whose column j depends only on column j of the right operand
# ---------------------------------------------------------------------------


@njit(cache=True)
def column_stable_matmul_numba(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=a.dtype)
    for i in range(n):
        for p in range(k):
            x = a[i, p]
            for j in range(m):
                out[i, j] += x * b[p, j]
    return out


def column_stable_matmul_numpy(a, b):
    # BLAS picks kernels by output width, so a fixed block width keeps each
    # column's summation order independent of how many columns exist.
    m = b.shape[1]
    pad = (-m) % _STABLE_BLOCK
    if pad:
        b = np.hstack([b, np.zeros((b.shape[0], pad), dtype=b.dtype)])
    blocks = [
        a @ np.ascontiguousarray(b[:, s : s + _STABLE_BLOCK])
        for s in range(0, m + pad, _STABLE_BLOCK)
    ]
    if not blocks:
        return np.zeros((a.shape[0], 0), dtype=a.dtype)
    return np.hstack(blocks)[:, :m]


_KERNELS = (
    "khop_time_diff_counts",
    "csr_row_mean",
    "csr_row_mean_backward",
    "segment_softmax",
    "segment_softmax_backward",
    "segment_sum",
    "scatter_add_rows",
    "attention_aggregate",
    "attention_aggregate_backward",
    "column_stable_matmul",
)


def _bind(backend: str) -> None:
    g = globals()
    for name in _KERNELS:
        g[name] = g[f"{name}_{backend}"]


_bind(BACKEND)


def get_backend(name: str) -> dict:
    """Return ``{kernel name: function}`` for ``"numba"`` or ``"numpy"``."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    return {k: globals()[f"{k}_{name}"] for k in _KERNELS}
