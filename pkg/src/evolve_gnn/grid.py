"""Experiment grids: models x history sizes x restart modes x seeds."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path

from . import __version__
from .datasets import load_dataset
from .metrics import ExperimentRecord, average_accuracy, confidence_interval, forward_transfer
from .models import ARCHITECTURES
from .tasks import FULL, build_task_sequence, parse_history
from .temporal import percentile, time_diff_distribution
from .trainer import TrainConfig, incremental_train, model_spec, static_train

log = logging.getLogger(__name__)

DEFAULT_LR = 0.005
PERCENTILE_DIRECTIVE = "percentiles"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentGridConfig:
    dataset: str
    models: list
    histories: list = field(default_factory=lambda: [PERCENTILE_DIRECTIVE])
    restarts: list = field(default_factory=lambda: ["cold", "warm"])
    seeds: list = field(default_factory=lambda: [0])
    lr: dict = field(default_factory=dict)
    default_lr: float = DEFAULT_LR
    steps: int = 200
    mode: str = "transductive"
    output_dir: str = "results"
    workers: int = 1

    def validate(self) -> None:
        if not self.models:
            raise ConfigError("model list is empty")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if not self.histories:
            raise ConfigError("history list is empty")
        bad = [m for m in self.models if m not in ARCHITECTURES]
        if bad:
            raise ConfigError(f"unknown models: {bad}")
        bad = [r for r in self.restarts if r not in ("cold", "warm")]
        if bad or not self.restarts:
            raise ConfigError(f"restart modes must be cold/warm, got {self.restarts}")
        for h in self.histories:
            if h != PERCENTILE_DIRECTIVE:
                parse_history(h)
        d = Path(self.dataset)
        for f in ("nodes.csv", "edges.csv"):
            if not (d / f).exists():
                raise ConfigError(f"dataset file {d / f} does not exist")

    def lr_for(self, model: str, history, restart: str) -> float:
        return float(self.lr.get(f"{model}/{history}/{restart}", self.lr.get(model, self.default_lr)))

    def identity(self) -> dict:
        """The fields that determine results (not where or how fast they run)."""
        d = asdict(self)
        d.pop("output_dir")
        d.pop("workers")
        d["dataset"] = str(Path(self.dataset).resolve())
        return d

    def digest(self) -> str:
        blob = json.dumps({"config": self.identity(), "version": __version__}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_grid_config(path) -> ExperimentGridConfig:
    raw = json.loads(Path(path).read_text())
    try:
        cfg = ExperimentGridConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    base = Path(path).resolve().parent
    if not Path(cfg.dataset).is_absolute():
        cfg.dataset = str(base / cfg.dataset)
    env = os.environ.get("EVOLVE_GNN_WORKERS")
    if env:
        cfg.workers = int(env)
    cfg.validate()
    return cfg


@lru_cache(maxsize=4)
def _graph(path: str):
    return load_dataset(path)


def resolve_histories(cfg: ExperimentGridConfig) -> list:
    """Expand the percentile directive into p25, p50, p75 of the 2-hop
    time differences plus full history; sizes below 1 are raised to 1."""
    out = []
    for h in cfg.histories:
        if h == PERCENTILE_DIRECTIVE:
            hist = time_diff_distribution(_graph(cfg.dataset), 2)
            sizes = [max(1, percentile(hist, p)) for p in (0.25, 0.5, 0.75)]
            out.extend(sizes + [FULL])
        else:
            out.append(parse_history(h))
    seen, uniq = set(), []
    for h in out:
        if h not in seen:
            seen.add(h)
            uniq.append(h)
    return uniq


def cells(cfg: ExperimentGridConfig, histories: list) -> list[dict]:
    return [
        {"model": m, "history": h, "restart": r, "seed": int(s)}
        for m, h, r, s in product(cfg.models, histories, cfg.restarts, cfg.seeds)
    ]


def cell_name(cell: dict) -> str:
    return f"{cell['model']}_c{cell['history']}_{cell['restart']}_s{cell['seed']}"


def _run_cell(dataset: str, cell: dict, lr: float, steps: int, mode: str) -> dict:
    g = _graph(dataset)
    seq = build_task_sequence(g, cell["history"], mode)
    spec = model_spec(cell["model"], g.num_features)
    cfg = TrainConfig(lr=lr, steps=steps, restart=cell["restart"], seed=cell["seed"])
    return incremental_train(seq, spec, cfg).to_dict()


def _safe_cell(args):
    dataset, cell, lr, steps, mode = args
    try:
        return cell, _run_cell(dataset, cell, lr, steps, mode), None
    except Exception:  # noqa: BLE001 - one failing cell must not stop the grid
        return cell, None, traceback.format_exc()


def write_run_csv(path, rec: ExperimentRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "acc_t", "n_test"])
        for t, a, n in zip(rec.times, rec.acc, rec.n_test):
            w.writerow([t, repr(float(a)), n])


def run_grid(cfg: ExperimentGridConfig) -> Path:
    """Run every cell not already present under the config's hashed directory."""
    cfg.validate()
    out = Path(cfg.output_dir) / f"grid-{cfg.digest()}"
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    histories = resolve_histories(cfg)
    all_cells = cells(cfg, histories)

    manifest = {
        "version": __version__,
        "digest": cfg.digest(),
        "config": asdict(cfg),
        "resolved_histories": histories,
        "seeds": list(cfg.seeds),
        "cells": [cell_name(c) for c in all_cells],
    }
    mpath = out / "manifest.json"
    if not mpath.exists():
        mpath.write_text(json.dumps(manifest, indent=2))

    todo = [c for c in all_cells if not (runs_dir / f"{cell_name(c)}.json").exists()]
    jobs = [(cfg.dataset, c, cfg.lr_for(c["model"], c["history"], c["restart"]), cfg.steps, cfg.mode) for c in todo]
    failures = {}
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_safe_cell, jobs))
    else:
        results = [_safe_cell(j) for j in jobs]
    for cell, rec, err in results:
        name = cell_name(cell)
        if err is not None:
            log.error("cell %s failed:\n%s", name, err)
            failures[name] = err
            continue
        (runs_dir / f"{name}.json").write_text(json.dumps(rec))
        write_run_csv(runs_dir / f"{name}.csv", ExperimentRecord.from_dict(rec))
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2))
    elif (out / "failures.json").exists():
        (out / "failures.json").unlink()

    write_tables(out, cfg, all_cells)
    return out


def load_records(out: Path, all_cells: list[dict]) -> dict:
    recs = {}
    for c in all_cells:
        p = out / "runs" / f"{cell_name(c)}.json"
        if p.exists():
            recs[(c["model"], c["history"], c["restart"], c["seed"])] = ExperimentRecord.from_dict(json.loads(p.read_text()))
    return recs


def write_tables(out: Path, cfg: ExperimentGridConfig, all_cells: list[dict]) -> None:
    recs = load_records(out, all_cells)
    dataset = Path(cfg.dataset).name
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "model", "history", "restart", "seed", "t", "acc_t", "n_test"])
        for (m, h, r, s), rec in sorted(recs.items(), key=lambda kv: str(kv[0])):
            for t, a, n in zip(rec.times, rec.acc, rec.n_test):
                w.writerow([dataset, m, h, r, s, t, repr(float(a)), n])

    groups: dict = {}
    for (m, h, r, s), rec in recs.items():
        groups.setdefault((m, h, r), {})[s] = rec
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "model", "history", "restart", "n_seeds", "mean_acc", "ci_halfwidth", "fwt"])
        for (m, h, r), by_seed in sorted(groups.items(), key=lambda kv: str(kv[0])):
            accs = [average_accuracy(v) for v in by_seed.values()]
            mean = sum(accs) / len(accs)
            half = confidence_interval(accs)[1] if len(accs) >= 2 else ""
            warm = groups.get((m, h, "warm"), {})
            cold = groups.get((m, h, "cold"), {})
            paired = sorted(set(warm) & set(cold))
            fwt = sum(forward_transfer(warm[s], cold[s]) for s in paired) / len(paired) if paired and warm[paired[0]].T >= 2 else ""
            w.writerow([dataset, m, h, r, len(accs), mean, half, fwt])


def load_manifest(results_dir) -> ExperimentGridConfig:
    """Rebuild the grid config recorded in a results directory."""
    manifest = json.loads((Path(results_dir) / "manifest.json").read_text())
    return ExperimentGridConfig(**manifest["config"])


# ---------------------------------------------------------------------------
# ablation: static vs incremental
# ---------------------------------------------------------------------------


def run_ablation(
    dataset: str,
    models: list,
    history,
    seeds: list,
    out_dir,
    lr: float = DEFAULT_LR,
    steps: int = 200,
    static_epochs: int = 400,
    restart: str = "warm",
) -> Path:
    """Static (trained once before the first task) vs incremental runs."""
    g = _graph(str(dataset))
    seq = build_task_sequence(g, history)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = Path(dataset).name
    rows = []
    for m, s in product(models, seeds):
        spec = model_spec(m, g.num_features)
        cfg = TrainConfig(lr=lr, steps=steps, restart=restart, seed=int(s), static_epochs=static_epochs)
        for variant, fn in (("incremental", incremental_train), ("static", static_train)):
            rec = fn(seq, spec, cfg)
            rows.extend([name, m, variant, s, t, repr(float(a)), n] for t, a, n in zip(rec.times, rec.acc, rec.n_test))
    path = out / "ablation.csv"
    new_file = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new_file:
            w.writerow(["dataset", "model", "variant", "seed", "t", "acc_t", "n_test"])
        w.writerows(rows)
    return path
