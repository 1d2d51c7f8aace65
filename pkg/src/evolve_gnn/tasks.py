"""Lifelong task sequences cut from a temporal graph."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .graph import Subgraph, TemporalGraph, window_subgraph

FULL = "full"
Mode = Literal["transductive", "inductive"]


class TaskSequenceError(ValueError):
    pass


def parse_history(value) -> int | str:
    """Accept an int >= 1 or ``"full"`` (also ``None``) for unbounded history."""
    if value is None or (isinstance(value, str) and value.strip().lower() == FULL):
        return FULL
    c = int(value)
    if c < 1:
        raise ValueError(f"history size must be >= 1 or 'full', got {value!r}")
    return c


@dataclass(frozen=True, eq=False)
class TaskView:
    """One task: train on ``train_graph``, evaluate new nodes on ``graph``.

    ``train_nodes`` index into ``train_graph`` and ``test_nodes`` into
    ``graph``; in transductive mode both graphs are the same object.
    """

    t: int
    graph: Subgraph
    train_graph: Subgraph
    train_nodes: np.ndarray
    test_nodes: np.ndarray
    new_classes: frozenset
    known_classes: frozenset

    @property
    def train_labels(self) -> np.ndarray:
        return self.train_graph.graph.labels[self.train_nodes]

    @property
    def test_labels(self) -> np.ndarray:
        return self.graph.graph.labels[self.test_nodes]

    @property
    def train_global_ids(self) -> np.ndarray:
        return self.train_graph.node_ids[self.train_nodes]

    @property
    def test_global_ids(self) -> np.ndarray:
        return self.graph.node_ids[self.test_nodes]


@dataclass(frozen=True, eq=False)
class TaskSequence:
    graph: TemporalGraph
    tasks: tuple[TaskView, ...]
    history: int | str
    mode: str
    t_start: int

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i) -> TaskView:
        return self.tasks[i]

    def task_at(self, t: int) -> TaskView:
        for task in self.tasks:
            if task.t == t:
                return task
        raise KeyError(f"no task at t={t}")

    def prefix_nodes(self) -> np.ndarray:
        """Global ids of nodes before the first evaluation step."""
        return np.flatnonzero(self.graph.node_time < self.t_start)


def first_task_time(g: TemporalGraph, fraction: float = 0.25) -> int:
    """Earliest timestamp ``t`` with at least ``fraction`` of nodes before ``t``."""
    times = g.times()
    if times.shape[0] < 2:
        raise TaskSequenceError("no task sequence derivable: fewer than two timestamps")
    sorted_t = np.sort(g.node_time)
    need = fraction * g.num_nodes
    for t in times[1:]:
        if np.searchsorted(sorted_t, t, side="left") >= need:
            return int(t)
    raise TaskSequenceError("no task sequence derivable")


def build_task_sequence(
    g: TemporalGraph,
    history=FULL,
    mode: Mode = "transductive",
    start_fraction: float = 0.25,
) -> TaskSequence:
    """One task per timestamp from the first evaluation time to the last.

    Task ``t`` covers nodes with time in ``[t - c, t]`` (``c = history``);
    nodes at time ``t`` are test nodes, earlier ones are training nodes. In
    inductive mode training sees only the window ``[t - c, t - 1]``.
    """
    if mode not in ("transductive", "inductive"):
        raise ValueError(f"unknown mode {mode!r}")
    if g.num_nodes == 0:
        raise TaskSequenceError("no task sequence derivable: empty graph")
    c = parse_history(history)
    t_start = first_task_time(g, start_fraction)

    tasks = []
    known: frozenset = frozenset()
    for t in g.times():
        t = int(t)
        if t < t_start:
            continue
        lo = -math.inf if c == FULL else t - c
        view = window_subgraph(g, lo, t)
        local_time = view.graph.node_time
        if mode == "transductive":
            train_graph = view
            train_nodes = np.flatnonzero(local_time < t)
        else:
            train_graph = window_subgraph(g, lo, t - 1)
            train_nodes = np.arange(train_graph.graph.num_nodes)
        test_nodes = np.flatnonzero(local_time == t)
        for a in (train_nodes, test_nodes):
            a.setflags(write=False)

        train_classes = frozenset(int(y) for y in np.unique(train_graph.graph.labels[train_nodes]))
        new = train_classes - known
        known = known | new
        tasks.append(TaskView(t, view, train_graph, train_nodes, test_nodes, new, known))

    return TaskSequence(g, tuple(tasks), c, mode, t_start)


def new_classes(seq: TaskSequence, t: int) -> frozenset:
    """Classes in task ``t``'s training labels that no earlier task trained on."""
    return seq.task_at(t).new_classes


def describe(seq: TaskSequence) -> list[dict]:
    rows = []
    for task in seq:
        g = task.graph.graph
        rows.append(
            {
                "t": task.t,
                "n_nodes": g.num_nodes,
                "n_edges": g.num_edges,
                "n_train": int(task.train_nodes.shape[0]),
                "n_test": int(task.test_nodes.shape[0]),
                "n_known_classes": len(task.known_classes),
                "n_new_classes": len(task.new_classes),
            }
        )
    return rows
