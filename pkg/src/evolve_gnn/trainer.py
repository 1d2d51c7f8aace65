"""Incremental training over a task sequence, plus the static baseline."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import AdamState, Tape
from .graph import TemporalGraph, window_subgraph
from .metrics import ExperimentRecord, accuracy
from .models import Model, ModelSpec, expand_output_layer, forward, init_parameters, predict
from .tasks import TaskSequence

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    steps: int = 200
    restart: str = "warm"
    seed: int = 0
    static_epochs: int = 400
    # fresh Adam moments every task; False carries them across warm restarts
    reset_optimizer: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.steps < 0 or self.static_epochs < 0:
            raise ValueError("step budgets must be non-negative")
        if self.restart not in ("warm", "cold"):
            raise ValueError(f"restart must be 'warm' or 'cold', got {self.restart!r}")


def model_spec(arch: str, in_dim: int, **kwargs) -> ModelSpec:
    """A spec template; the trainer sets the class count per task."""
    return ModelSpec(arch, in_dim, n_classes=1, **kwargs)


def _column_labels(labels: np.ndarray, classes: list) -> np.ndarray:
    col = {c: j for j, c in enumerate(classes)}
    return np.array([col.get(int(y), -1) for y in labels], dtype=np.int64)


def fit(
    model: Model,
    g: TemporalGraph,
    train_nodes: np.ndarray,
    steps: int,
    optimizer: AdamState,
    rng: np.random.Generator,
) -> list[float]:
    """Full-batch training on ``train_nodes`` of ``g``; returns the loss curve."""
    y = _column_labels(g.labels, model.classes)
    if np.any(y[train_nodes] < 0):
        raise TrainingError("training labels outside the model's known classes")
    y = np.where(y < 0, 0, y)
    losses = []
    for step in range(steps):
        model.zero_grad()
        tape = Tape()
        try:
            z = forward(tape, model, g, train=True, rng=rng)
            loss = tape.masked_cross_entropy(z, y, train_nodes)
            tape.backward(loss)
            optimizer.step(model.params)
        except FloatingPointError as exc:
            raise TrainingError(f"step {step}: {exc}") from exc
        losses.append(float(loss.value))
    return losses


def incremental_train(seq: TaskSequence, spec: ModelSpec, cfg: TrainConfig, callback=None) -> ExperimentRecord:
    """Train through the sequence, growing the output layer as classes appear.

    Cold restarts re-initialize every parameter per task; warm restarts carry
    the previous task's parameters over. ``callback(task, model)`` runs after
    each task's evaluation and may inspect (or tamper with) the model.
    """
    if len(seq) == 0:
        raise ValueError("empty task sequence")
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(seq))
    model: Model | None = None
    optimizer: AdamState | None = None
    known: list[int] = []
    rec = ExperimentRecord([], [], [], config=_config_snapshot(seq, spec, cfg, "incremental"), seed=cfg.seed)

    for task, ss in zip(seq, seeds):
        init_seed, drop_seed = ss.spawn(2)
        start = time.perf_counter()
        new = sorted(task.new_classes)
        loss_final = float("nan")
        if task.train_nodes.size == 0:
            msg = f"t={task.t}: no training nodes, evaluating the previous model"
            log.warning(msg)
            rec.warnings.append(msg)
        else:
            classes = known + new
            if cfg.restart == "cold" or model is None:
                model = init_parameters(spec.with_classes(len(classes)), seed=init_seed, classes=classes)
            elif new:
                model = expand_output_layer(model, len(new), new)
            else:
                model = model.copy()
            if cfg.reset_optimizer or optimizer is None:
                optimizer = AdamState(lr=cfg.lr)
            try:
                losses = fit(
                    model,
                    task.train_graph.graph,
                    task.train_nodes,
                    cfg.steps,
                    optimizer,
                    np.random.default_rng(drop_seed),
                )
            except TrainingError as exc:
                raise TrainingError(f"t={task.t} ({spec.arch}, {cfg.restart}): {exc}") from exc
            if losses:
                loss_final = losses[-1]
            known = classes

        pred = predict(model, task.graph.graph, task.test_nodes)
        rec.times.append(task.t)
        rec.acc.append(accuracy(pred, task.test_labels))
        rec.n_test.append(int(task.test_nodes.size))
        rec.final_loss.append(loss_final)
        rec.output_width.append(0 if model is None else model.n_classes)
        rec.wall_time.append(time.perf_counter() - start)
        if callback is not None:
            callback(task, model)
    return rec


def static_train(seq: TaskSequence, spec: ModelSpec, cfg: TrainConfig, callback=None) -> ExperimentRecord:
    """Train once on every node before the first task, then only evaluate."""
    if len(seq) == 0:
        raise ValueError("empty task sequence")
    init_seed, drop_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    start = time.perf_counter()
    prefix = window_subgraph(seq.graph, None, seq.t_start - 1)
    g = prefix.graph
    classes = sorted(int(c) for c in np.unique(g.labels))
    model = init_parameters(spec.with_classes(len(classes)), seed=init_seed, classes=classes)
    losses = fit(
        model,
        g,
        np.arange(g.num_nodes),
        cfg.static_epochs,
        AdamState(lr=cfg.lr),
        np.random.default_rng(drop_seed),
    )
    train_time = time.perf_counter() - start
    rec = ExperimentRecord([], [], [], config=_config_snapshot(seq, spec, cfg, "static"), seed=cfg.seed)
    for i, task in enumerate(seq):
        start = time.perf_counter()
        pred = predict(model, task.graph.graph, task.test_nodes)
        rec.times.append(task.t)
        rec.acc.append(accuracy(pred, task.test_labels))
        rec.n_test.append(int(task.test_nodes.size))
        rec.final_loss.append(losses[-1] if losses else float("nan"))
        rec.output_width.append(model.n_classes)
        rec.wall_time.append(time.perf_counter() - start + (train_time if i == 0 else 0.0))
        if callback is not None:
            callback(task, model)
    return rec


def _config_snapshot(seq: TaskSequence, spec: ModelSpec, cfg: TrainConfig, kind: str) -> dict:
    return {
        "kind": kind,
        "model": spec.arch,
        "history": seq.history,
        "mode": seq.mode,
        "t_start": seq.t_start,
        **{k: v for k, v in asdict(cfg).items()},
        "spec": {k: v for k, v in asdict(spec).items() if k != "n_classes"},
    }
