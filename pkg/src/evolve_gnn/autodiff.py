"""Tape-based reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied during one forward pass.
``tape.backward(loss)`` walks the records in reverse, pushing vector-Jacobian
products into ``Tensor.grad``. Sparse matrices (features, adjacency) enter
only as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import kernels


class Tensor:
    """A dense array (at most 2-D) with an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ValueError("tensors are at most 2-D")
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def _check_finite(op: str, value: np.ndarray) -> None:
    # any nan/inf entry turns the sum non-finite
    with np.errstate(over="ignore", invalid="ignore"):
        total = float(np.sum(value))
    if not math.isfinite(total):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 1:
        return g.sum(axis=0)
    return g.sum(axis=0, keepdims=True)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    vjp: Callable


@dataclass
class Tape:
    """Records primitives for one forward pass.

    With ``record=False`` primitives only compute values, which is what
    inference wants.
    """

    record: bool = True
    _records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self._records)

    def _emit(self, op: str, value: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
        _check_finite(op, value)
        needs = any(t.requires_grad for t in inputs)
        out = Tensor(value, requires_grad=needs)
        if self.record and needs:
            self._records.append(_Record(out, inputs, vjp))
        return out

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for rec in reversed(self._records):
            g = rec.out.grad
            if g is None:
                continue
            grads = rec.vjp(g)
            for t, gi in zip(rec.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi
        self._records.clear()

    # -- linear algebra ----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor, column_stable: bool = False) -> Tensor:
        """``a @ b``. ``column_stable`` makes column j depend only on ``b[:, j]``
        bit for bit, which output layers need to survive width changes."""
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
        if column_stable:
            value = kernels.column_stable_matmul(
                np.ascontiguousarray(a.value), np.ascontiguousarray(b.value)
            )
        else:
            value = a.value @ b.value

        def vjp(g):
            ga = g @ b.value.T if a.requires_grad else None
            gb = a.value.T @ g if b.requires_grad else None
            return ga, gb

        return self._emit("matmul", value, (a, b), vjp)

    def spmm(self, s: sp.spmatrix, b: Tensor) -> Tensor:
        """Sparse constant times dense tensor."""
        if s.shape[1] != b.shape[0]:
            raise ValueError(f"spmm shape mismatch {s.shape} @ {b.shape}")
        s = sp.csr_matrix(s)
        value = np.asarray(s @ b.value)

        def vjp(g):
            return (np.asarray(s.T @ g),)

        return self._emit("spmm", value, (b,), vjp)

    def row_mean(self, indptr: np.ndarray, indices: np.ndarray, h: Tensor) -> Tensor:
        """Mean of ``h`` over each CSR row's neighbors; empty rows give zero."""
        n_src = h.shape[0]
        value = kernels.csr_row_mean(indptr, indices, np.ascontiguousarray(h.value))

        def vjp(g):
            return (kernels.csr_row_mean_backward(indptr, indices, np.ascontiguousarray(g), n_src),)

        return self._emit("row_mean", value, (h,), vjp)

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"concat_cols row mismatch {a.shape} | {b.shape}")
        split = a.shape[1]
        value = np.hstack([a.value, b.value])

        def vjp(g):
            return g[:, :split], g[:, split:]

        return self._emit("concat_cols", value, (a, b), vjp)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; ``b`` may be a bias row broadcast over ``a``'s rows."""
        try:
            value = a.value + b.value
        except ValueError:
            raise ValueError(f"add shape mismatch {a.shape} + {b.shape}") from None
        if value.shape != a.shape:
            raise ValueError(f"add would broadcast {a.shape} to {value.shape}")

        def vjp(g):
            return g, _unbroadcast(g, b.shape)

        return self._emit("add", value, (a, b), vjp)

    # -- nonlinearities ----------------------------------------------------

    def relu(self, x: Tensor) -> Tensor:
        pos = x.value > 0
        value = np.where(pos, x.value, 0.0)
        return self._emit("relu", value, (x,), lambda g: (g * pos,))

    def leaky_relu(self, x: Tensor, slope: float = 0.2) -> Tensor:
        pos = x.value > 0
        value = np.where(pos, x.value, slope * x.value)
        return self._emit("leaky_relu", value, (x,), lambda g: (np.where(pos, g, slope * g),))

    def softmax_rows(self, x: Tensor) -> Tensor:
        s = _softmax(x.value)

        def vjp(g):
            return (s * (g - (s * g).sum(axis=1, keepdims=True)),)

        return self._emit("softmax_rows", s, (x,), vjp)

    def dropout(self, x: Tensor, rate: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
        """Inverted dropout: kept units are scaled by ``1 / (1 - rate)``."""
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if not train or rate == 0.0:
            return x
        keep = 1.0 - rate
        mask = (rng.random(x.shape) < keep) / keep
        return self._emit("dropout", x.value * mask, (x,), lambda g: (g * mask,))

    # -- graph attention helpers -------------------------------------------

    def head_dot(self, z: Tensor, a: Tensor, heads: int) -> Tensor:
        """Per-head dot product of ``z`` (N x heads*F) with ``a`` (heads x F).

        Features are accumulated one column at a time so that appending
        zero-weight columns leaves the scores bit-identical.
        """
        n, hf = z.shape
        if a.shape[0] != heads or a.shape[0] * a.shape[1] != hf:
            raise ValueError(f"head_dot shape mismatch {z.shape} vs {a.shape}")
        f = a.shape[1]
        zv = z.value.reshape(n, heads, f)
        value = np.zeros((n, heads))
        for c in range(f):
            value += zv[:, :, c] * a.value[:, c]

        def vjp(g):
            gz = (g[:, :, None] * a.value[None, :, :]).reshape(n, hf) if z.requires_grad else None
            ga = np.einsum("nh,nhf->hf", g, zv) if a.requires_grad else None
            return gz, ga

        return self._emit("head_dot", value, (z, a), vjp)

    def gather_rows(self, x: Tensor, idx: np.ndarray) -> Tensor:
        n = x.shape[0]
        value = x.value[idx]

        def vjp(g):
            return (kernels.scatter_add_rows(np.ascontiguousarray(g), idx, n),)

        return self._emit("gather_rows", value, (x,), vjp)

    def edge_softmax(self, scores: Tensor, indptr: np.ndarray) -> Tensor:
        """Softmax of edge scores within each destination's CSR segment."""
        alpha = kernels.segment_softmax(np.ascontiguousarray(scores.value), indptr)

        def vjp(g):
            return (kernels.segment_softmax_backward(alpha, np.ascontiguousarray(g), indptr),)

        return self._emit("edge_softmax", alpha, (scores,), vjp)

    def head_scale(self, m: Tensor, w: Tensor, heads: int) -> Tensor:
        """Scale each head's block of ``m`` (E x heads*F) by ``w`` (E x heads)."""
        e, hf = m.shape
        f = hf // heads
        mv = m.value.reshape(e, heads, f)
        value = (mv * w.value[:, :, None]).reshape(e, hf)

        def vjp(g):
            g3 = g.reshape(e, heads, f)
            gm = (g3 * w.value[:, :, None]).reshape(e, hf) if m.requires_grad else None
            gw = (g3 * mv).sum(axis=2) if w.requires_grad else None
            return gm, gw

        return self._emit("head_scale", value, (m, w), vjp)

    def segment_sum(self, values: Tensor, indptr: np.ndarray) -> Tensor:
        seg = np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))
        value = kernels.segment_sum(np.ascontiguousarray(values.value), indptr)
        return self._emit("segment_sum", value, (values,), lambda g: (g[seg],))

    def attention_aggregate(self, z: Tensor, alpha: Tensor, indptr: np.ndarray, src: np.ndarray, heads: int) -> Tensor:
        """``out[i] = sum_e alpha[e] * z[src[e]]`` over destination ``i``'s edges,
        per head. Equivalent to gather_rows, head_scale and segment_sum chained."""
        if z.shape[1] % heads or alpha.shape != (src.shape[0], heads):
            raise ValueError(f"attention_aggregate shape mismatch {z.shape}, {alpha.shape}")
        zv = np.ascontiguousarray(z.value)
        av = np.ascontiguousarray(alpha.value)
        value = kernels.attention_aggregate(zv, av, indptr, src, heads)

        def vjp(g):
            return kernels.attention_aggregate_backward(zv, av, np.ascontiguousarray(g), indptr, src, heads)

        return self._emit("attention_aggregate", value, (z, alpha), vjp)

    # -- loss ----------------------------------------------------------------

    def masked_cross_entropy(self, logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
        """Mean negative log-likelihood over the rows selected by ``mask``.

        ``mask`` is a boolean row mask or an index array; ``labels`` holds one
        column index per row of ``logits``.
        """
        rows = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask, dtype=np.int64)
        if rows.size == 0:
            raise ValueError("loss mask selects no rows")
        y = np.asarray(labels, dtype=np.int64)[rows]
        if y.min() < 0 or y.max() >= logits.shape[1]:
            raise ValueError("label outside the logit columns")
        sel = logits.value[rows]
        shifted = sel - sel.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        logp = shifted[np.arange(rows.size), y] - logz
        value = np.array(-logp.mean())

        def vjp(g):
            p = np.exp(shifted - logz[:, None])
            p[np.arange(rows.size), y] -= 1.0
            out = np.zeros_like(logits.value)
            out[rows] = p * (g / rows.size)
            return (out,)

        return self._emit("masked_cross_entropy", value, (logits,), vjp)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    return _softmax(np.asarray(x, dtype=np.float64))


def dropout_sparse(x: sp.csr_matrix, rate: float, rng: np.random.Generator, train: bool = True) -> sp.csr_matrix:
    """Inverted dropout on the stored entries of a constant sparse matrix."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not train or rate == 0.0:
        return x
    keep = 1.0 - rate
    out = x.copy()
    out.data = out.data * ((rng.random(out.data.shape[0]) < keep) / keep)
    return out


class AdamState:
    """Adam with bias correction; moments are keyed by parameter name."""

    def __init__(self, lr: float = 0.005, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        grads = {}
        for name, p in params.items():
            if p.grad is None:
                raise ValueError(f"missing gradient for parameter {name!r}")
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            grads[name] = p.grad
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None or m.shape != g.shape:
                m = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * self.v[name] + (1.0 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: AdamState, params: dict[str, Tensor]) -> AdamState:
    """Apply one Adam update in place using ``params[name].grad``."""
    state.step(params)
    return state
