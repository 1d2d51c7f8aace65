"""Canonical dataset files and the adapter for published benchmark archives."""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import GraphError, TemporalGraph, from_arrays, load_graph

NODES, EDGES, FEATURES = "nodes.csv", "edges.csv", "features.txt"

# Published characteristics of the three benchmark datasets. PharmaBio's edge
# count is only reported to two significant digits.
TABLE1 = {
    "dblp-easy": {"num_nodes": 45407, "num_edges": 112131, "num_features": 2278, "num_classes": 12, "num_tasks": 12},
    "dblp-hard": {"num_nodes": 198675, "num_edges": 643734, "num_features": 4043, "num_classes": 73, "num_tasks": 12},
    "pharmabio": {"num_nodes": 68068, "num_edges": 2_100_000, "num_features": 4829, "num_classes": 7, "num_tasks": 18},
}
_APPROX = {("pharmabio", "num_edges"): 0.05}


class AdapterError(ValueError):
    pass


def write_canonical(g: TemporalGraph, out_dir) -> Path:
    """Write ``nodes.csv``, ``edges.csv`` and ``features.txt`` for ``g``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = g.class_vocab.names
    with open(out / NODES, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "time", "label"])
        for i in range(g.num_nodes):
            w.writerow([i, int(g.node_time[i]), names[g.labels[i]]])
    with open(out / EDGES, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        w.writerows(g.edge_array().tolist())
    coo = g.features.tocoo()
    with open(out / FEATURES, "w", encoding="utf-8") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
    return out


def load_dataset(path, num_features: int | None = None) -> TemporalGraph:
    """Load a canonical dataset directory."""
    p = Path(path)
    missing = [f for f in (NODES, EDGES) if not (p / f).exists()]
    if missing:
        raise AdapterError(f"{p}: missing {', '.join(missing)}")
    feats = p / FEATURES if (p / FEATURES).exists() else None
    return load_graph(p / NODES, p / EDGES, feats, num_features=num_features)


def dataset_name(path) -> str | None:
    """Match a directory name against the known benchmark names."""
    key = re.sub(r"[^a-z]", "", Path(path).resolve().name.lower())
    for name in TABLE1:
        if re.sub(r"[^a-z]", "", name) == key:
            return name
    return None


def validate_counts(g: TemporalGraph, name: str, num_tasks: int | None = None) -> list[str]:
    """Compare a graph's size against its published characteristics.

    Returns human-readable mismatch messages; an empty list means agreement.
    """
    expected = TABLE1[name]
    observed = {
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "num_features": g.num_features,
        "num_classes": g.class_vocab.size,
    }
    if num_tasks is not None:
        observed["num_tasks"] = num_tasks
    problems = []
    for key, got in observed.items():
        want = expected[key]
        tol = _APPROX.get((name, key), 0.0)
        if abs(got - want) > tol * want:
            problems.append(f"{name}: {key} is {got}, expected {want}")
    return problems


def _read_adjlist(path: Path) -> np.ndarray:
    edges = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].split()
            if not line:
                continue
            u = int(line[0])
            edges.extend((u, int(v)) for v in line[1:])
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _read_edgelist(path: Path) -> np.ndarray:
    rows = [ln.split()[:2] for ln in open(path, encoding="utf-8") if ln.strip() and not ln.startswith("#")]
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def _load_features(p: Path):
    if (p / "X.npz").exists():
        return sp.load_npz(p / "X.npz")
    x = np.load(p / "X.npy", allow_pickle=False)
    return sp.csr_matrix(x)


def adapt_published_dataset(archive_dir, out_dir, name: str | None = None) -> tuple[TemporalGraph, list[str]]:
    """Convert an extracted benchmark archive into the canonical format.

    Recognized layouts:

    * canonical (``nodes.csv``, ``edges.csv``, ``features.txt``), re-validated;
    * array layout: ``X.npy`` or ``X.npz`` (features), ``y.npy`` (labels),
      ``t.npy`` (years) plus ``adjlist.txt`` or ``edgelist.txt``.

    Returns the graph and a list of count mismatches against the published
    table (empty when the directory name is not a known dataset).
    """
    p = Path(archive_dir)
    if not p.is_dir():
        raise AdapterError(f"{p} is not a directory")
    if (p / NODES).exists() or (p / EDGES).exists():
        g = load_dataset(p)
    else:
        required = ["y.npy", "t.npy"]
        feat_ok = (p / "X.npy").exists() or (p / "X.npz").exists()
        struct_ok = (p / "adjlist.txt").exists() or (p / "edgelist.txt").exists()
        missing = [f for f in required if not (p / f).exists()]
        if not feat_ok:
            missing.append("X.npy|X.npz")
        if not struct_ok:
            missing.append("adjlist.txt|edgelist.txt")
        if len(missing) == 4:
            raise AdapterError(f"{p}: unrecognized layout")
        if missing:
            raise AdapterError(f"{p}: truncated archive, missing {', '.join(missing)}")
        y = np.load(p / "y.npy", allow_pickle=False)
        t = np.load(p / "t.npy", allow_pickle=False)
        edges = _read_adjlist(p / "adjlist.txt") if (p / "adjlist.txt").exists() else _read_edgelist(p / "edgelist.txt")
        try:
            g = from_arrays(t, [str(v) for v in y.tolist()], edges, _load_features(p))
        except GraphError as exc:
            raise AdapterError(f"{p}: {exc}") from exc
    write_canonical(g, out_dir)
    name = name or dataset_name(p)
    problems = validate_counts(g, name) if name in TABLE1 else []
    return g, problems
