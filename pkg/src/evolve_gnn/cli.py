"""Command-line entry point: ``evolve-gnn <subcommand>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .datasets import AdapterError, adapt_published_dataset, load_dataset, write_canonical
from .graph import GraphError
from .grid import ConfigError, load_grid_config, load_manifest, run_ablation, run_grid
from .metrics import average_accuracy
from .models import ARCHITECTURES
from .report import write_report
from .synthetic import generate_synthetic_stream
from .tasks import TaskSequenceError, build_task_sequence, describe, parse_history
from .temporal import drift_series, percentile, time_diff_distribution
from .trainer import TrainConfig, incremental_train, model_spec, static_train

log = logging.getLogger("evolve_gnn")


def _writer(path):
    """CSV writer on ``path``, or stdout when path is None or '-'."""
    if path in (None, "-"):
        return csv.writer(sys.stdout, lineterminator="\n"), None
    fh = open(path, "w", newline="", encoding="utf-8")
    return csv.writer(fh), fh


def cmd_analyze(args) -> int:
    g = load_dataset(args.dataset_dir)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    hist_w, f1 = _writer(out / "time_diffs.csv" if out else None)
    hist_w.writerow(["k", "delta", "count"])
    rows = []
    for k in args.k:
        h = time_diff_distribution(g, k)
        for d in h.deltas():
            hist_w.writerow([k, d, h.counts[d]])
        if not h.is_empty():
            rows.append([k] + [percentile(h, p) for p in (0.25, 0.5, 0.75, 1.0)])
    if f1:
        f1.close()
    pw, f2 = _writer(out / "percentiles.csv" if out else None)
    pw.writerow(["k", "p25", "p50", "p75", "p100"])
    pw.writerows(rows)
    if f2:
        f2.close()
    dw, f3 = _writer(out / "drift.csv" if out else None)
    dw.writerow(["t", "sigma"])
    dw.writerows([t, repr(float(s))] for t, s in drift_series(g))
    if f3:
        f3.close()
    return 0


def cmd_tasks(args) -> int:
    g = load_dataset(args.dataset_dir)
    seq = build_task_sequence(g, parse_history(args.history), args.mode)
    rows = describe(seq)
    w, fh = _writer(args.out)
    cols = ["t", "n_nodes", "n_edges", "n_train", "n_test", "n_known_classes", "n_new_classes"]
    w.writerow(cols)
    w.writerows([r[c] for c in cols] for r in rows)
    if fh:
        fh.close()
    return 0


def cmd_run(args) -> int:
    g = load_dataset(args.dataset_dir)
    seq = build_task_sequence(g, parse_history(args.history), args.mode)
    spec = model_spec(args.model, g.num_features)
    cfg = TrainConfig(lr=args.lr, steps=args.steps, restart=args.restart, seed=args.seed, static_epochs=args.static_epochs)
    fn = static_train if args.static else incremental_train
    rec = fn(seq, spec, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.model}_c{seq.history}_{'static' if args.static else args.restart}_s{args.seed}"
    with open(out / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "acc_t", "n_test"])
        w.writerows([t, repr(float(a)), n] for t, a, n in zip(rec.times, rec.acc, rec.n_test))
    (out / f"{stem}.json").write_text(json.dumps(rec.to_dict(), indent=2))
    print(f"{stem}: average accuracy {average_accuracy(rec):.4f} over {rec.T} tasks")
    return 0


def cmd_grid(args) -> int:
    if args.replay:
        cfg = load_manifest(args.replay)
        cfg.output_dir = str(Path(args.replay).resolve().parent)
    else:
        cfg = load_grid_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    elif os.environ.get("EVOLVE_GNN_WORKERS"):
        cfg.workers = int(os.environ["EVOLVE_GNN_WORKERS"])
    out = run_grid(cfg)
    print(out)
    return 1 if (out / "failures.json").exists() else 0


def cmd_ablation(args) -> int:
    path = run_ablation(
        args.dataset_dir,
        args.models,
        parse_history(args.history),
        args.seeds,
        args.out,
        lr=args.lr,
        steps=args.steps,
        static_epochs=args.static_epochs,
    )
    print(path)
    return 0


def cmd_report(args) -> int:
    for p in write_report(args.csv, args.out):
        print(p)
    return 0


def cmd_adapt(args) -> int:
    g, problems = adapt_published_dataset(args.archive_dir, args.out, name=args.name)
    print(f"nodes={g.num_nodes} edges={g.num_edges} features={g.num_features} classes={g.class_vocab.size}")
    for p in problems:
        print(f"mismatch: {p}", file=sys.stderr)
    return 1 if problems else 0


def _schedule(items) -> dict:
    sched = {}
    for item in items or []:
        cls, _, year = item.partition(":")
        sched[int(cls)] = int(year)
    return sched


def cmd_synth(args) -> int:
    g = generate_synthetic_stream(
        n_nodes=args.n_nodes,
        n_years=args.n_years,
        n_initial_classes=args.n_initial_classes,
        emergence_schedule=_schedule(args.emerge),
        seed=args.seed,
        n_features=args.n_features,
    )
    write_canonical(g, args.out)
    print(f"wrote {g.num_nodes} nodes, {g.num_edges} edges to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evolve-gnn", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="time-difference histograms, percentiles and drift")
    a.add_argument("dataset_dir")
    a.add_argument("--k", type=int, nargs="+", default=[1, 2, 3])
    a.add_argument("--out", help="directory for the three CSVs (default: stdout)")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("tasks", help="task sequence utilities")
    tsub = t.add_subparsers(dest="tasks_command", required=True)
    td = tsub.add_parser("describe", help="per-task node, edge and class counts")
    td.add_argument("dataset_dir")
    td.add_argument("--history", default="full")
    td.add_argument("--mode", choices=["transductive", "inductive"], default="transductive")
    td.add_argument("--out")
    td.set_defaults(func=cmd_tasks)

    def train_flags(q):
        q.add_argument("--lr", type=float, default=0.005)
        q.add_argument("--steps", type=int, default=200)
        q.add_argument("--static-epochs", type=int, default=400)
        q.add_argument("--history", default="full")

    r = sub.add_parser("run", help="one incremental (or static) training run")
    r.add_argument("--dataset-dir", required=True)
    r.add_argument("--model", choices=ARCHITECTURES, required=True)
    r.add_argument("--restart", choices=["cold", "warm"], default="warm")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mode", choices=["transductive", "inductive"], default="transductive")
    r.add_argument("--static", action="store_true", help="train once before the first task")
    r.add_argument("--out", default="results")
    train_flags(r)
    r.set_defaults(func=cmd_run)

    gr = sub.add_parser("grid", help="run an experiment grid from a JSON config")
    src = gr.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?")
    src.add_argument("--replay", help="results directory whose manifest to re-run")
    gr.add_argument("--workers", type=int)
    gr.set_defaults(func=cmd_grid)

    ab = sub.add_parser("ablation", help="static vs incremental pairs")
    ab.add_argument("--dataset-dir", required=True)
    ab.add_argument("--models", nargs="+", choices=ARCHITECTURES, required=True)
    ab.add_argument("--seeds", type=int, nargs="+", default=[0])
    ab.add_argument("--out", default="results")
    train_flags(ab)
    ab.set_defaults(func=cmd_ablation)

    rp = sub.add_parser("report", help="SVG accuracy charts from results CSVs")
    rp.add_argument("csv", nargs="+")
    rp.add_argument("--out", default="report")
    rp.set_defaults(func=cmd_report)

    ad = sub.add_parser("adapt", help="convert a published dataset archive")
    ad.add_argument("archive_dir")
    ad.add_argument("out")
    ad.add_argument("--name", help="benchmark name for count validation")
    ad.set_defaults(func=cmd_adapt)

    sy = sub.add_parser("synth", help="write a synthetic evolving graph")
    sy.add_argument("out")
    sy.add_argument("--n-nodes", type=int, default=5000)
    sy.add_argument("--n-years", type=int, default=10)
    sy.add_argument("--n-initial-classes", type=int, default=4)
    sy.add_argument("--n-features", type=int, default=200)
    sy.add_argument("--emerge", nargs="*", metavar="CLASS:YEAR", help="e.g. 4:6")
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GraphError, AdapterError, ConfigError, TaskSequenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
