"""Node classifiers (MLP, Simplified GCN, GraphSAGE-mean, GAT) and their
parameter lifecycle: init, output-layer expansion, prediction, checkpoints.

Output layers use column-stable products, so widening the class dimension
never perturbs the logits of classes that were already known.
"""

from __future__ import annotations

import copy
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .autodiff import Tape, Tensor, dropout_sparse
from .graph import TemporalGraph

ARCHITECTURES = ("mlp", "sgc", "sage", "gat")

DEFAULT_HIDDEN = {"mlp": (64,), "sgc": (), "sage": (32,), "gat": (8,)}


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    in_dim: int
    n_classes: int
    hidden: tuple = None
    heads: int = 4
    dropout: float = 0.5
    sgc_k: int = 2
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.hidden is None:
            object.__setattr__(self, "hidden", DEFAULT_HIDDEN[self.arch])
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_classes < 1:
            raise ValueError("a model needs at least one output class")
        if self.in_dim < 1:
            raise ValueError("input dimension must be positive")
        if self.arch == "sgc" and self.hidden:
            raise ValueError("sgc has no hidden layers")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def with_classes(self, n_classes: int) -> "ModelSpec":
        return replace(self, n_classes=n_classes)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass(eq=False)
class Model:
    """Parameters of one classifier, plus the class id behind each output column."""

    spec: ModelSpec
    params: dict
    classes: list
    rng: np.random.Generator = field(repr=False)
    # name -> (fan_in, kind) for output-layer parameters; kind is "weight",
    # "bias" or "attn"
    output_params: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def parameter_count(self) -> int:
        return int(sum(p.value.size for p in self.params.values()))

    def copy(self) -> "Model":
        params = {k: Tensor(v.value.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return Model(
            self.spec,
            params,
            list(self.classes),
            copy.deepcopy(self.rng),
            dict(self.output_params),
        )

    def state_arrays(self) -> dict:
        return {k: v.value for k, v in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def graph_cache(self, g: TemporalGraph) -> dict:
        """Per-graph derived structures; reset whenever the graph changes."""
        if self._cache.get("graph") is not g:
            self._cache.clear()
            self._cache["graph"] = g
        return self._cache


def _layer_dims(spec: ModelSpec) -> list[tuple[int, int]]:
    if spec.arch == "gat":
        dims = [spec.in_dim] + [h * spec.heads for h in spec.hidden]
    else:
        dims = [spec.in_dim] + list(spec.hidden)
    return list(zip(dims[:-1], dims[1:])) + [(dims[-1], spec.n_classes)]


def init_parameters(spec: ModelSpec, seed=0, classes=None) -> Model:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    out: dict[str, tuple] = {}
    layers = _layer_dims(spec)
    last = len(layers) - 1
    for i, (d_in, d_out) in enumerate(layers):
        if spec.arch in ("mlp", "sgc"):
            name = "lin" if spec.arch == "sgc" else f"lin{i}"
            params[f"{name}.weight"] = _glorot(rng, d_in, d_out, (d_in, d_out))
            params[f"{name}.bias"] = np.zeros(d_out)
            if i == last:
                out[f"{name}.weight"] = (d_in, "weight")
                out[f"{name}.bias"] = (d_in, "bias")
        elif spec.arch == "sage":
            params[f"sage{i}.weight"] = _glorot(rng, 2 * d_in, d_out, (2 * d_in, d_out))
            params[f"sage{i}.bias"] = np.zeros(d_out)
            if i == last:
                out[f"sage{i}.weight"] = (2 * d_in, "weight")
                out[f"sage{i}.bias"] = (2 * d_in, "bias")
        else:
            heads = spec.heads if i < last else 1
            f = d_out // heads
            params[f"gat{i}.weight"] = _glorot(rng, d_in, d_out, (d_in, d_out))
            params[f"gat{i}.attn_src"] = _glorot(rng, f, 1, (heads, f))
            params[f"gat{i}.attn_dst"] = _glorot(rng, f, 1, (heads, f))
            params[f"gat{i}.bias"] = np.zeros(d_out)
            if i == last:
                out[f"gat{i}.weight"] = (d_in, "weight")
                out[f"gat{i}.attn_src"] = (1, "attn")
                out[f"gat{i}.attn_dst"] = (1, "attn")
                out[f"gat{i}.bias"] = (d_in, "bias")
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    if classes is None:
        classes = list(range(spec.n_classes))
    if len(classes) != spec.n_classes:
        raise ValueError("classes must name every output column")
    return Model(spec, tensors, list(classes), rng, out)


def expand_output_layer(model: Model, l: int, new_classes=None) -> Model:
    """Return a copy with ``l`` extra output columns.

    New weight columns are Glorot-initialized for the widened layer; new
    biases and new output-attention entries start at zero. Every existing
    parameter value is copied unchanged.
    """
    if l < 1:
        raise ValueError("expansion needs l >= 1")
    if new_classes is None:
        start = max(model.classes, default=-1) + 1
        new_classes = list(range(start, start + l))
    new_classes = list(new_classes)
    if len(new_classes) != l:
        raise ValueError("new_classes must have length l")
    out = model.copy()
    c_new = model.n_classes + l
    for name, (fan_in, kind) in out.output_params.items():
        old = out.params[name].value
        if kind == "weight":
            extra = _glorot(out.rng, fan_in, c_new, (old.shape[0], l))
            val = np.hstack([old, extra])
        elif kind == "attn":
            val = np.hstack([old, np.zeros((old.shape[0], l))])
        else:
            val = np.concatenate([old, np.zeros(l)])
        out.params[name] = Tensor(val, requires_grad=True, name=name)
    out.spec = model.spec.with_classes(c_new)
    out.classes = list(model.classes) + new_classes
    return out


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _mean_matrix(g: TemporalGraph) -> sp.csr_matrix:
    deg = g.degrees
    w = np.repeat(1.0 / np.maximum(deg, 1), deg)
    return sp.csr_matrix((w, g.indices, g.indptr), shape=(g.num_nodes, g.num_nodes))


def normalized_adjacency(g: TemporalGraph) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with degrees counted after adding self-loops."""
    a = g.adjacency() + sp.identity(g.num_nodes, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(d)
    return sp.csr_matrix(sp.diags(inv_sqrt) @ a @ sp.diags(inv_sqrt))


def propagate(g: TemporalGraph, x: sp.spmatrix, k: int) -> sp.csr_matrix:
    """``S^k x`` as a sparse matrix."""
    out = sp.csr_matrix(x)
    if k == 0:
        return out
    s = normalized_adjacency(g)
    for _ in range(k):
        out = sp.csr_matrix(s @ out)
    return out


def _attention_structure(g: TemporalGraph):
    """CSR over destinations with a self-loop prepended to every segment."""
    n = g.num_nodes
    deg = g.degrees
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg + 1, out=indptr[1:])
    src = np.empty(indptr[-1], dtype=np.int64)
    src[indptr[:-1]] = np.arange(n)
    mask = np.ones(indptr[-1], dtype=bool)
    mask[indptr[:-1]] = False
    src[mask] = g.indices
    dst = np.repeat(np.arange(n), deg + 1)
    return indptr, src, dst


def mlp_forward(tape: Tape, model: Model, g: TemporalGraph, train: bool = False, rng=None) -> Tensor:
    spec = model.spec
    n_layers = len(spec.hidden) + 1
    h = None
    for i in range(n_layers):
        w = model.params[f"lin{i}.weight"]
        b = model.params[f"lin{i}.bias"]
        if h is None:
            xd = dropout_sparse(g.features, spec.dropout, rng, train)
            z = tape.spmm(xd, w)
        else:
            h = tape.dropout(h, spec.dropout, rng, train)
            z = tape.matmul(h, w, column_stable=i == n_layers - 1)
        h = tape.add(z, b)
        if i < n_layers - 1:
            h = tape.relu(h)
    return h


def sgc_forward(tape: Tape, model: Model, g: TemporalGraph, train: bool = False, rng=None) -> Tensor:
    cache = model.graph_cache(g)
    key = ("sgc_prop", model.spec.sgc_k)
    if key not in cache:
        cache[key] = propagate(g, g.features, model.spec.sgc_k)
    xd = dropout_sparse(cache[key], model.spec.dropout, rng, train)
    return tape.add(tape.spmm(xd, model.params["lin.weight"]), model.params["lin.bias"])


def sage_forward(tape: Tape, model: Model, g: TemporalGraph, train: bool = False, rng=None) -> Tensor:
    spec = model.spec
    n_layers = len(spec.hidden) + 1
    cache = model.graph_cache(g)
    if "mean" not in cache:
        cache["mean"] = _mean_matrix(g)
    h = None
    for i in range(n_layers):
        u = model.params[f"sage{i}.weight"]
        b = model.params[f"sage{i}.bias"]
        if h is None:
            xd = dropout_sparse(g.features, spec.dropout, rng, train)
            cat = sp.hstack([xd, cache["mean"] @ xd], format="csr")
            z = tape.spmm(cat, u)
        else:
            h = tape.dropout(h, spec.dropout, rng, train)
            cat = tape.concat_cols(h, tape.row_mean(g.indptr, g.indices, h))
            z = tape.matmul(cat, u, column_stable=i == n_layers - 1)
        h = tape.add(z, b)
        if i < n_layers - 1:
            h = tape.relu(h)
    return h


def gat_forward(
    tape: Tape,
    model: Model,
    g: TemporalGraph,
    train: bool = False,
    rng=None,
    return_attention: bool = False,
):
    spec = model.spec
    n_layers = len(spec.hidden) + 1
    cache = model.graph_cache(g)
    if "attn" not in cache:
        cache["attn"] = _attention_structure(g)
    indptr, src, dst = cache["attn"]
    attention = []
    h = None
    for i in range(n_layers):
        last = i == n_layers - 1
        heads = 1 if last else spec.heads
        w = model.params[f"gat{i}.weight"]
        if h is None:
            xd = dropout_sparse(g.features, spec.dropout, rng, train)
            z = tape.spmm(xd, w)
        else:
            h = tape.dropout(h, spec.dropout, rng, train)
            z = tape.matmul(h, w, column_stable=last)
        s_src = tape.head_dot(z, model.params[f"gat{i}.attn_src"], heads)
        s_dst = tape.head_dot(z, model.params[f"gat{i}.attn_dst"], heads)
        scores = tape.leaky_relu(
            tape.add(tape.gather_rows(s_dst, dst), tape.gather_rows(s_src, src)),
            spec.negative_slope,
        )
        alpha = tape.edge_softmax(scores, indptr)
        attention.append(alpha.value)
        agg = tape.attention_aggregate(z, alpha, indptr, src, heads)
        h = tape.add(agg, model.params[f"gat{i}.bias"])
        if not last:
            h = tape.relu(h)
    if return_attention:
        return h, attention, (indptr, src, dst)
    return h


FORWARD = {"mlp": mlp_forward, "sgc": sgc_forward, "sage": sage_forward, "gat": gat_forward}


def forward(tape: Tape, model: Model, g: TemporalGraph, train: bool = False, rng=None) -> Tensor:
    if g.num_features != model.spec.in_dim:
        raise ValueError(f"graph has D={g.num_features}, model expects {model.spec.in_dim}")
    return FORWARD[model.spec.arch](tape, model, g, train=train, rng=rng)


def logits(model: Model, g: TemporalGraph) -> np.ndarray:
    """Evaluation-mode logits for every node of ``g``."""
    return forward(Tape(record=False), model, g, train=False).value


def argmax_lowest(z: np.ndarray) -> np.ndarray:
    """Row-wise argmax, ties going to the lowest column."""
    return np.argmax(z, axis=1)


def predict(model: Model | None, g: TemporalGraph, nodes=None) -> np.ndarray:
    """Class ids for ``nodes`` of ``g`` (all nodes when ``None``).

    Without a model every prediction is ``-1``, which never matches a label.
    """
    idx = np.arange(g.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    if model is None:
        return np.full(idx.shape[0], -1, dtype=np.int64)
    z = logits(model, g)[idx]
    return np.asarray(model.classes, dtype=np.int64)[argmax_lowest(z)]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: Model, path, vocab_names=None) -> None:
    meta = {
        "spec": asdict(model.spec),
        "classes": list(map(int, model.classes)),
        "vocab": list(vocab_names) if vocab_names is not None else None,
        "output_params": {k: list(v) for k, v in model.output_params.items()},
        "param_order": list(model.params),
        "rng_state": model.rng.bit_generator.state,
    }
    arrays = {f"param:{k}": v.value for k, v in model.params.items()}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta)), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[Model, list | None]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[f"param:{k}"] for k in meta["param_order"]}
    spec_d = meta["spec"]
    spec_d["hidden"] = tuple(spec_d["hidden"])
    spec = ModelSpec(**spec_d)
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    out = {k: (int(v[0]), v[1]) for k, v in meta["output_params"].items()}
    return Model(spec, params, meta["classes"], rng, out), meta["vocab"]
