"""Seeded synthetic citation-like stream with emerging classes."""

from __future__ import annotations

from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .graph import ClassVocabulary, TemporalGraph, from_arrays


def generate_synthetic_stream(
    n_nodes: int = 5000,
    n_years: int = 10,
    n_initial_classes: int = 4,
    emergence_schedule: Mapping[int, int] | None = None,
    seed: int = 0,
    *,
    n_features: int = 200,
    start_year: int = 2000,
    edges_per_node: float = 3.0,
    homophily: float = 0.75,
    recency: float = 0.2,
    same_year: float = 0.1,
    words_per_node: int = 10,
    signature_words: int = 12,
    feature_noise: float = 0.8,
    topic_drift: float = 0.0,
) -> TemporalGraph:
    """Generate a temporal graph in which classes appear on a schedule.

    ``emergence_schedule`` maps each emerging class id (counting on from
    ``n_initial_classes``) to the year offset, in ``[0, n_years)``, in which it
    first appears. Each node links to ``~edges_per_node`` earlier-or-same-year
    nodes; the year gap is 0 with probability ``same_year`` and otherwise
    geometric (>= 1) with parameter ``recency``, and the target
    shares the node's class with probability ``homophily`` (stochastic block
    structure). Features are bags of words drawn from a class topic with
    probability ``1 - feature_noise`` and uniformly otherwise; each year every
    class topic moves a ``topic_drift`` share of its mass onto fresh words.
    """
    schedule = dict(emergence_schedule or {})
    n_classes = n_initial_classes + len(schedule)
    for c, y in schedule.items():
        if not n_initial_classes <= c < n_classes:
            raise ValueError(f"emerging class ids must be {n_initial_classes}..{n_classes - 1}, got {c}")
        if not 0 <= y < n_years:
            raise ValueError(f"class {c} emerges in year {y}, beyond the {n_years}-year range")
    if n_initial_classes < 1 or n_nodes < n_years:
        raise ValueError("need at least one initial class and one node per year")

    rng = np.random.default_rng(seed)
    first_year = np.zeros(n_classes, dtype=np.int64)
    for c, y in schedule.items():
        first_year[c] = y

    year = np.sort(rng.integers(0, n_years, n_nodes))
    year[:n_years] = np.arange(n_years)
    year.sort()
    label = np.empty(n_nodes, dtype=np.int64)
    for y in range(n_years):
        idx = np.flatnonzero(year == y)
        avail = np.flatnonzero(first_year <= y)
        label[idx] = rng.choice(avail, size=idx.size)

    by_year = [np.flatnonzero(year == y) for y in range(n_years)]
    by_year_class = {
        (y, c): by_year[y][label[by_year[y]] == c] for y in range(n_years) for c in range(n_classes)
    }
    edges = []
    n_out = rng.poisson(edges_per_node, n_nodes)
    for u in range(n_nodes):
        yu = year[u]
        for _ in range(n_out[u]):
            lag = 0 if rng.random() < same_year else int(rng.geometric(recency))
            lag = min(lag, yu)
            yt = yu - lag
            pool = by_year_class[(yt, label[u])] if rng.random() < homophily else by_year[yt]
            pool = pool[pool < u] if yt == yu else pool
            if pool.size == 0:
                continue
            v = int(pool[rng.integers(pool.size)])
            edges.append((u, v))
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)

    def fresh_topic():
        t = np.zeros(n_features)
        words = rng.choice(n_features, size=min(signature_words, n_features), replace=False)
        t[words] = rng.uniform(0.5, 1.5, size=words.size)
        return t / t.sum()

    # topics[y, c] is class c's word distribution in year y
    topics = np.zeros((n_years, n_classes, n_features))
    for c in range(n_classes):
        topics[0, c] = fresh_topic()
        for y in range(1, n_years):
            topics[y, c] = (1.0 - topic_drift) * topics[y - 1, c] + topic_drift * fresh_topic()
    rows, cols = [], []
    for u in range(n_nodes):
        k = max(1, rng.poisson(words_per_node))
        from_topic = rng.random(k) >= feature_noise
        w = np.where(
            from_topic,
            rng.choice(n_features, size=k, p=topics[year[u], label[u]]),
            rng.integers(0, n_features, size=k),
        )
        rows.extend([u] * k)
        cols.extend(w.tolist())
    x = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_nodes, n_features))
    x.sum_duplicates()

    names = tuple(f"class{c}" for c in range(n_classes))
    vocab = ClassVocabulary(names, tuple(int(start_year + first_year[c]) for c in range(n_classes)))
    return from_arrays(start_year + year, label, edges, x, class_vocab=vocab)


def class_densities(g: TemporalGraph) -> tuple[float, float]:
    """Empirical (intra-class, inter-class) edge densities."""
    e = g.edge_array()
    same = g.labels[e[:, 0]] == g.labels[e[:, 1]]
    counts = np.bincount(g.labels, minlength=g.class_vocab.size).astype(np.float64)
    intra_pairs = float((counts * (counts - 1) / 2).sum())
    n = g.num_nodes
    inter_pairs = n * (n - 1) / 2 - intra_pairs
    intra = same.sum() / intra_pairs if intra_pairs else 0.0
    inter = (~same).sum() / inter_pairs if inter_pairs else 0.0
    return float(intra), float(inter)
