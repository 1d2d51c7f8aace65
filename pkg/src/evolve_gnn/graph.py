"""Immutable temporal attributed graph with CSR adjacency."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised when graph input tables are malformed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ClassVocabulary:
    """Label string <-> contiguous class id, with first-seen timestamps.

    Ids are assigned in order of first appearance (ties broken by label
    string), so classes that emerge later always get larger ids.
    """

    names: tuple[str, ...]
    first_seen: tuple[int, ...]
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.names) != len(self.first_seen):
            raise GraphError("names and first_seen differ in length")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})
        if len(self._index) != len(self.names):
            raise GraphError("duplicate class name in vocabulary")

    @classmethod
    def from_labels(cls, labels: Sequence[str], times: Sequence[int]) -> "ClassVocabulary":
        first: dict[str, int] = {}
        for lab, t in zip(labels, times):
            t = int(t)
            if lab not in first or t < first[lab]:
                first[lab] = t
        order = sorted(first, key=lambda n: (first[n], n))
        return cls(tuple(order), tuple(first[n] for n in order))

    @property
    def size(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        return self._index[name]

    def encode(self, labels: Iterable[str]) -> np.ndarray:
        return np.array([self._index[lab] for lab in labels], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class TemporalGraph:
    """Undirected attributed graph whose nodes carry an integer timestamp.

    ``indptr``/``indices`` hold a symmetric adjacency without self-loops,
    neighbor lists sorted ascending. ``features`` is a CSR matrix whose rows
    have unit L2 norm or are empty.
    """

    node_time: np.ndarray
    features: sp.csr_matrix
    labels: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    class_vocab: ClassVocabulary

    @property
    def num_nodes(self) -> int:
        return self.node_time.shape[0]

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return self.indices.shape[0] // 2

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        data = np.ones(self.indices.shape[0])
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an ``(E, 2)`` array with ``src < dst``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def times(self) -> np.ndarray:
        return np.unique(self.node_time)


def _l2_normalize_rows(x: sp.csr_matrix) -> sp.csr_matrix:
    x = sp.csr_matrix(x, dtype=np.float64)
    x.sum_duplicates()
    x.eliminate_zeros()
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return sp.csr_matrix(sp.diags(scale) @ x)


def _symmetric_csr(n: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        bad = edges[(edges < 0) | (edges >= n)][0]
        raise GraphError(f"unknown node id {int(bad)}")
    edges = edges[edges[:, 0] != edges[:, 1]]
    both = np.concatenate([edges, edges[:, ::-1]])
    a = sp.csr_matrix(
        (np.ones(both.shape[0], dtype=np.int8), (both[:, 0], both[:, 1])), shape=(n, n)
    )
    a.sum_duplicates()
    a.sort_indices()
    return a.indptr.astype(np.int64), a.indices.astype(np.int64)


def from_arrays(
    node_time: Sequence[int],
    labels: Sequence[str] | Sequence[int],
    edges,
    features=None,
    class_vocab: ClassVocabulary | None = None,
    normalize: bool = True,
) -> TemporalGraph:
    """Build a validated graph from in-memory arrays.

    ``labels`` may be strings (a vocabulary is derived) or integer ids into
    ``class_vocab``. ``features`` defaults to an empty ``N x 0`` matrix.
    Edges are symmetrized; duplicates and self-loops are dropped.
    """
    node_time = np.asarray(node_time)
    if node_time.size and not np.issubdtype(node_time.dtype, np.integer):
        as_int = node_time.astype(np.int64)
        if not np.array_equal(as_int, node_time):
            raise GraphError("timestamps must be integers")
        node_time = as_int
    node_time = node_time.astype(np.int64)
    n = node_time.shape[0]

    if class_vocab is None:
        str_labels = [str(lab) for lab in labels]
        class_vocab = ClassVocabulary.from_labels(str_labels, node_time)
        y = class_vocab.encode(str_labels)
    else:
        y = np.asarray(labels, dtype=np.int64)
    if y.shape[0] != n:
        raise GraphError("labels and node_time differ in length")
    if y.size and (y.min() < 0 or y.max() >= class_vocab.size):
        raise GraphError("label id outside class vocabulary")

    if features is None:
        features = sp.csr_matrix((n, 0))
    features = sp.csr_matrix(features, dtype=np.float64)
    if features.shape[0] != n:
        raise GraphError("feature rows differ from node count")
    if features.nnz and features.data.min() < 0:
        raise GraphError("features must be non-negative")
    if normalize:
        features = _l2_normalize_rows(features)

    indptr, indices = _symmetric_csr(n, edges)
    return TemporalGraph(
        node_time=_frozen(node_time),
        features=features,
        labels=_frozen(y),
        indptr=_frozen(indptr),
        indices=_frozen(indices),
        class_vocab=class_vocab,
    )


def _read_csv(path: Path, header: list[str]) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise GraphError(f"{path}: expected header {','.join(header)}")
    return [r for r in rows[1:] if r]


def load_graph(
    nodes_path: str | Path,
    edges_path: str | Path,
    features_path: str | Path | None = None,
    num_features: int | None = None,
) -> TemporalGraph:
    """Load the canonical three-file dataset format.

    ``nodes.csv`` has header ``id,time,label``, ``edges.csv`` has ``src,dst``
    and ``features.txt`` holds ``node_id feature_id value`` triplets.
    """
    rows = _read_csv(Path(nodes_path), ["id", "time", "label"])
    n = len(rows)
    times = np.zeros(n, dtype=np.int64)
    labels: list[str | None] = [None] * n
    for r in rows:
        try:
            i = int(r[0])
        except ValueError:
            raise GraphError(f"non-integer node id {r[0]!r}") from None
        if not 0 <= i < n:
            raise GraphError(f"node id {i} outside dense range 0..{n - 1}")
        if labels[i] is not None:
            raise GraphError(f"duplicate node id {i}")
        try:
            times[i] = int(r[1])
        except ValueError:
            raise GraphError(f"non-numeric timestamp {r[1]!r} for node {i}") from None
        labels[i] = r[2]

    edge_rows = _read_csv(Path(edges_path), ["src", "dst"])
    try:
        edges = np.array([(int(a), int(b)) for a, b in edge_rows], dtype=np.int64)
    except ValueError as exc:
        raise GraphError(f"malformed edge row: {exc}") from None

    features = None
    if features_path is not None:
        trip = np.loadtxt(features_path, ndmin=2) if Path(features_path).stat().st_size else np.zeros((0, 3))
        rows_i = trip[:, 0].astype(np.int64)
        cols = trip[:, 1].astype(np.int64)
        if rows_i.size and (rows_i.min() < 0 or rows_i.max() >= n):
            raise GraphError("feature triplet references unknown node id")
        d = int(cols.max()) + 1 if cols.size else 0
        if num_features is not None:
            if cols.size and cols.max() >= num_features:
                raise GraphError(
                    f"feature index {int(cols.max())} >= D={num_features}"
                )
            d = num_features
        features = sp.csr_matrix((trip[:, 2], (rows_i, cols)), shape=(n, d))

    return from_arrays(times, labels, edges, features)


def neighbors(g: TemporalGraph, u: int) -> np.ndarray:
    """Sorted neighbor ids of ``u``."""
    return g.indices[g.indptr[u] : g.indptr[u + 1]]


def k_hop_neighborhood(g: TemporalGraph, u: int, k: int) -> set[int]:
    """Nodes within ``k`` hops of ``u``, excluding ``u`` itself."""
    if k < 1:
        raise ValueError("k must be >= 1")
    seen = {u}
    frontier = deque([u])
    for _ in range(k):
        nxt = deque()
        for w in frontier:
            for v in neighbors(g, w):
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt
    seen.discard(u)
    return seen


@dataclass(frozen=True, eq=False)
class Subgraph:
    """An induced subgraph plus ``node_ids[new_id] == old_id``."""

    graph: TemporalGraph
    node_ids: np.ndarray

    def old_to_new(self, n_parent: int) -> np.ndarray:
        """Dense lookup from parent ids to subgraph ids (-1 when absent)."""
        m = np.full(n_parent, -1, dtype=np.int64)
        m[self.node_ids] = np.arange(self.node_ids.shape[0])
        return m


def induced_subgraph(g: TemporalGraph, keep: np.ndarray) -> Subgraph:
    """Induced subgraph on the boolean node mask ``keep``; ids keep their order."""
    keep = np.asarray(keep, dtype=bool)
    node_ids = np.flatnonzero(keep)
    a = g.adjacency()[node_ids][:, node_ids].tocsr()
    a.sort_indices()
    sub = TemporalGraph(
        node_time=_frozen(g.node_time[node_ids]),
        features=g.features[node_ids],
        labels=_frozen(g.labels[node_ids]),
        indptr=_frozen(a.indptr.astype(np.int64)),
        indices=_frozen(a.indices.astype(np.int64)),
        class_vocab=g.class_vocab,
    )
    return Subgraph(sub, _frozen(node_ids))


def window_subgraph(
    g: TemporalGraph, t_lo: float | None = None, t_hi: float | None = None
) -> Subgraph:
    """Induced subgraph on nodes with ``t_lo <= time <= t_hi``.

    ``None`` (or an infinite bound) leaves that side of the window open.
    """
    lo = -math.inf if t_lo is None else t_lo
    hi = math.inf if t_hi is None else t_hi
    if lo > hi:
        raise ValueError(f"empty time range: t_lo={t_lo} > t_hi={t_hi}")
    keep = (g.node_time >= lo) & (g.node_time <= hi)
    return induced_subgraph(g, keep)
