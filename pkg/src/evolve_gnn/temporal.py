"""Neighborhood time-difference distributions and class drift."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

import numpy as np

from . import kernels
from .graph import TemporalGraph


@dataclass(frozen=True)
class TimeDiffHistogram:
    """Multiset of non-negative integer time deltas, stored as counts."""

    counts: Mapping[int, int]
    k: int

    @classmethod
    def from_dense(cls, dense: np.ndarray, k: int) -> "TimeDiffHistogram":
        nz = np.flatnonzero(dense)
        return cls({int(d): int(dense[d]) for d in nz}, k)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __len__(self) -> int:
        return self.total

    def is_empty(self) -> bool:
        return self.total == 0

    def deltas(self) -> list[int]:
        return sorted(self.counts)

    def max_delta(self) -> int:
        if self.is_empty():
            raise ValueError("no time differences")
        return max(self.counts)


def time_diff_distribution(g: TemporalGraph, k: int) -> TimeDiffHistogram:
    """Histogram of ``time(u) - time(v)`` over ordered pairs within ``k`` hops.

    Each pair ``(u, v)`` with ``v`` in the k-hop neighborhood of ``u`` and
    ``time(v) <= time(u)`` contributes once, however many paths join them.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if g.num_nodes == 0:
        return TimeDiffHistogram({}, k)
    dense = kernels.khop_time_diff_counts(g.indptr, g.indices, g.node_time, int(k))
    return TimeDiffHistogram.from_dense(dense, k)


def percentile(h: TimeDiffHistogram, p: float) -> int:
    """Nearest-rank percentile: the smallest delta covering ``p`` of the mass."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    total = h.total
    if total == 0:
        raise ValueError("no time differences")
    rank = max(1, math.ceil(p * total))
    seen = 0
    for d in h.deltas():
        seen += h.counts[d]
        if seen >= rank:
            return d
    return h.max_delta()


def history_sizes(g: TemporalGraph, k: int = 2, ps=(0.25, 0.5, 0.75, 1.0)) -> list[int]:
    """Percentiles of the k-hop time differences, used as history sizes."""
    h = time_diff_distribution(g, k)
    return [percentile(h, p) for p in ps]


def class_distribution(labels: Iterable[Hashable]) -> dict:
    """Empirical class frequencies of a non-empty label sequence."""
    counts = Counter(labels)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("cannot build a class distribution from no labels")
    return {y: c / total for y, c in counts.items()}


def drift_magnitude(p_prev: Mapping, p_cur: Mapping) -> float:
    """Total variation distance over the union of both supports."""
    support = set(p_prev) | set(p_cur)
    return 0.5 * sum(abs(p_prev.get(y, 0.0) - p_cur.get(y, 0.0)) for y in support)


def drift_series(g: TemporalGraph) -> list[tuple[int, float]]:
    """``(t, sigma)`` between the class distributions of consecutive timestamps."""
    times = g.times()
    out = []
    prev = None
    for t in times:
        cur = class_distribution(g.labels[g.node_time == t].tolist())
        if prev is not None:
            out.append((int(t), drift_magnitude(prev, cur)))
        prev = cur
    return out
