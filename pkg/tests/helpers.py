import numpy as np
import scipy.sparse as sp
from hypothesis import strategies as st

from evolve_gnn.graph import from_arrays


def random_graph(rng, n=None, max_n=30, p=None, t_range=5, n_classes=3, n_features=6):
    """Erdos-Renyi graph with random integer timestamps and dense-ish features."""
    n = int(rng.integers(1, max_n + 1)) if n is None else n
    p = rng.uniform(0.02, 0.4) if p is None else p
    iu = np.triu_indices(n, 1)
    mask = rng.random(iu[0].shape[0]) < p
    edges = np.stack([iu[0][mask], iu[1][mask]], axis=1)
    times = rng.integers(0, t_range, n)
    labels = [f"c{v}" for v in rng.integers(0, n_classes, n)]
    x = rng.random((n, n_features)) * (rng.random((n, n_features)) < 0.6)
    return from_arrays(times, labels, edges, sp.csr_matrix(x))


@st.composite
def graphs(draw, max_nodes=25, max_time=6):
    n = draw(st.integers(1, max_nodes))
    times = draw(st.lists(st.integers(0, max_time), min_size=n, max_size=n))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    edges = draw(st.lists(pairs, max_size=3 * n))
    labels = draw(st.lists(st.sampled_from("abcd"), min_size=n, max_size=n))
    return from_arrays(times, labels, np.array(edges, dtype=np.int64).reshape(-1, 2))


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar function ``f`` at ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Elementwise relative error; entries where both sides are below ``floor``
    are compared absolutely so exact zeros do not divide by zero."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(diff / scale, initial=0.0))
