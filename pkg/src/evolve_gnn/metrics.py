"""Per-run records and the aggregate measures computed from them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class ExperimentRecord:
    """Per-task accuracies of one run (model, history, restart, seed)."""

    times: list
    acc: list
    n_test: list
    config: dict = field(default_factory=dict)
    seed: int = 0
    wall_time: list = field(default_factory=list)
    final_loss: list = field(default_factory=list)
    output_width: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.times) == len(self.acc) == len(self.n_test)):
            raise ValueError("times, acc and n_test must align")
        for a in self.acc:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"accuracy {a} outside [0, 1]")

    @property
    def T(self) -> int:
        return len(self.acc)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(**d)


def average_accuracy(rec: ExperimentRecord) -> float:
    """Unweighted mean of the per-task accuracies."""
    if rec.T < 1:
        raise ValueError("record has no tasks")
    return float(sum(rec.acc) / rec.T)


def forward_transfer(rec_warm: ExperimentRecord, rec_cold: ExperimentRecord) -> float:
    """Mean accuracy gain of warm over cold restarts on tasks 2..T."""
    if rec_warm.T != rec_cold.T:
        raise ValueError(f"records differ in length: {rec_warm.T} vs {rec_cold.T}")
    if rec_warm.times != rec_cold.times:
        raise ValueError("records cover different task sequences")
    if rec_warm.T < 2:
        raise ValueError("forward transfer needs at least two tasks")
    diffs = [w - c for w, c in zip(rec_warm.acc[1:], rec_cold.acc[1:])]
    return float(sum(diffs) / (rec_warm.T - 1))


def relative_accuracy(rec_limited: ExperimentRecord, rec_full: ExperimentRecord) -> float:
    """Average accuracy of ``rec_limited`` as a percentage of ``rec_full``'s."""
    full = average_accuracy(rec_full)
    if full == 0:
        raise ZeroDivisionError("full-history accuracy is zero")
    return 100.0 * average_accuracy(rec_limited) / full


def confidence_interval(values) -> tuple[float, float]:
    """Mean and 1.96 standard errors (sample std, ``ddof=1``)."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least two values for a confidence interval")
    mean = float(v.mean())
    half = float(1.96 * v.std(ddof=1) / math.sqrt(v.size))
    return mean, half


def paired_forward_transfer(warm: dict, cold: dict) -> float:
    """FWT averaged over seeds present in both ``{seed: record}`` maps."""
    seeds = sorted(set(warm) & set(cold))
    if not seeds:
        raise ValueError("no seed has both a warm and a cold record")
    return float(np.mean([forward_transfer(warm[s], cold[s]) for s in seeds]))


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(pred == truth))
