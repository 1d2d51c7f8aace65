import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evolve_gnn.autodiff import AdamState, Tape, Tensor, adam_step, dropout_sparse, softmax_rows

from helpers import max_rel_error, numeric_grad

N, M = 5, 7
TOL = 1e-4


def scalarize(tape, out, u, r):
    """u^T out r as a 1x1 tensor built from taped matmuls."""
    left = tape.matmul(Tensor(u[None, :]), out)
    return tape.matmul(left, Tensor(r[:, None]))


def check(build, *values, seed=0):
    """Compare taped gradients of ``u^T build(...) r`` against central differences."""
    rng = np.random.default_rng(seed)
    params = [Tensor(v, requires_grad=True) for v in values]
    tape = Tape()
    out = build(tape, *params)
    u = rng.standard_normal(out.shape[0])
    r = rng.standard_normal(out.shape[1])
    loss = scalarize(tape, out, u, r)
    tape.backward(loss)

    def f():
        t = Tape(record=False)
        return float(scalarize(t, build(t, *[Tensor(p.value) for p in params]), u, r).value.item())

    for p in params:
        num = numeric_grad(f, p.value)
        assert max_rel_error(p.grad, num) < TOL


@pytest.fixture
def x(rng):
    return rng.standard_normal((N, M))


def csr_graph(rng, n=N, p=0.5):
    a = (rng.random((n, n)) < p).astype(float)
    np.fill_diagonal(a, 0)
    a = np.maximum(a, a.T)
    m = sp.csr_matrix(a)
    return m.indptr.astype(np.int64), m.indices.astype(np.int64)


def attention_csr(rng, n=N):
    indptr, indices = csr_graph(rng, n)
    deg = np.diff(indptr)
    ptr = np.concatenate([[0], np.cumsum(deg + 1)]).astype(np.int64)
    src = np.empty(ptr[-1], dtype=np.int64)
    for i in range(n):
        src[ptr[i]] = i
        src[ptr[i] + 1 : ptr[i + 1]] = indices[indptr[i] : indptr[i + 1]]
    return ptr, src


class TestGradients:
    def test_matmul(self, rng, x):
        check(lambda t, a, b: t.matmul(a, b), x, rng.standard_normal((M, 3)))

    def test_matmul_column_stable(self, rng, x):
        check(lambda t, a, b: t.matmul(a, b, column_stable=True), x, rng.standard_normal((M, 11)))

    def test_spmm(self, rng):
        s = sp.random(N, M, density=0.4, random_state=1, format="csr")
        check(lambda t, b: t.spmm(s, b), rng.standard_normal((M, 4)))

    def test_row_mean(self, rng, x):
        indptr, indices = csr_graph(rng)
        check(lambda t, h: t.row_mean(indptr, indices, h), x)

    def test_concat_cols(self, rng, x):
        check(lambda t, a, b: t.concat_cols(a, b), x, rng.standard_normal((N, 2)))

    def test_add_bias(self, rng, x):
        check(lambda t, a, b: t.add(a, b), x, rng.standard_normal(M))

    def test_add_same_shape(self, rng, x):
        check(lambda t, a, b: t.add(a, b), x, rng.standard_normal((N, M)))

    def test_relu(self, x):
        check(lambda t, a: t.relu(a), x)

    def test_leaky_relu(self, x):
        check(lambda t, a: t.leaky_relu(a, 0.2), x)

    def test_softmax_rows(self, x):
        check(lambda t, a: t.softmax_rows(a), x)

    def test_dropout_fixed_mask(self, x):
        check(lambda t, a: t.dropout(a, 0.5, np.random.default_rng(7), True), x)

    def test_head_dot(self, rng):
        z = rng.standard_normal((N, 2 * 3))
        check(lambda t, z_, a: t.head_dot(z_, a, 2), z, rng.standard_normal((2, 3)))

    def test_gather_rows(self, x):
        idx = np.array([0, 3, 3, 1, 4, 0, 2])
        check(lambda t, a: t.gather_rows(a, idx), x)

    def test_edge_softmax(self, rng):
        indptr = np.array([0, 2, 3, 7, 7, 9])
        check(lambda t, s: t.edge_softmax(s, indptr), rng.standard_normal((9, 2)))

    def test_head_scale(self, rng):
        check(lambda t, m, w: t.head_scale(m, w, 2), rng.standard_normal((6, 4)), rng.standard_normal((6, 2)))

    def test_segment_sum(self, rng):
        indptr = np.array([0, 2, 2, 5, 6])
        check(lambda t, v: t.segment_sum(v, indptr), rng.standard_normal((6, 3)))

    def test_attention_aggregate(self, rng):
        ptr, src = attention_csr(rng)
        z = rng.standard_normal((N, 2 * 3))
        alpha = rng.random((src.size, 2))
        check(lambda t, z_, a: t.attention_aggregate(z_, a, ptr, src, 2), z, alpha)

    def test_masked_cross_entropy(self, rng, x):
        labels = rng.integers(0, M, N)
        mask = np.array([True, False, True, True, False])
        params = Tensor(x, requires_grad=True)
        tape = Tape()
        loss = tape.masked_cross_entropy(params, labels, mask)
        tape.backward(loss)

        def f():
            return float(Tape(record=False).masked_cross_entropy(Tensor(params.value), labels, mask).value)

        assert max_rel_error(params.grad, numeric_grad(f, params.value)) < TOL
        assert not params.grad[~mask].any()


def test_attention_aggregate_matches_composition(rng):
    ptr, src = attention_csr(rng)
    z = Tensor(rng.standard_normal((N, 6)))
    alpha = Tensor(rng.random((src.size, 2)))
    t = Tape(record=False)
    fused = t.attention_aggregate(z, alpha, ptr, src, 2).value
    composed = t.segment_sum(t.head_scale(t.gather_rows(z, src), alpha, 2), ptr).value
    np.testing.assert_allclose(fused, composed, rtol=1e-13, atol=1e-13)


class TestLoss:
    def test_uniform_logits(self):
        for c in (2, 5, 13):
            t = Tape()
            loss = t.masked_cross_entropy(Tensor(np.zeros((4, c))), np.arange(4) % c, np.ones(4, bool))
            assert float(loss.value) == pytest.approx(math.log(c), abs=1e-12)

    def test_empty_mask(self):
        with pytest.raises(ValueError, match="no rows"):
            Tape().masked_cross_entropy(Tensor(np.zeros((3, 2))), np.zeros(3, int), np.zeros(3, bool))

    def test_index_mask(self):
        z = Tensor(np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 1.0]]))
        a = Tape().masked_cross_entropy(z, np.array([0, 1, 0]), np.array([0, 2]))
        b = Tape().masked_cross_entropy(z, np.array([0, 1, 0]), np.array([True, False, True]))
        assert float(a.value) == float(b.value)


class TestErrors:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Tape().matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ValueError):
            Tape().add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))
        with pytest.raises(ValueError):
            Tape().concat_cols(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            Tape().add(Tensor(np.array([[1.0, np.inf]])), Tensor(np.zeros(2)))

    def test_three_dims_rejected(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 2, 2)))

    def test_dropout_rate(self):
        with pytest.raises(ValueError):
            Tape().dropout(Tensor(np.ones((2, 2))), 1.0, np.random.default_rng(0))


class TestDropout:
    def test_rate_zero_is_identity(self, x):
        t = Tensor(x)
        assert Tape().dropout(t, 0.0, np.random.default_rng(0)) is t
        s = sp.csr_matrix(x)
        assert dropout_sparse(s, 0.0, np.random.default_rng(0)) is s

    def test_eval_is_identity(self, x):
        t = Tensor(x)
        assert Tape().dropout(t, 0.5, np.random.default_rng(0), train=False) is t

    def test_inverted_scaling(self):
        out = Tape().dropout(Tensor(np.ones((200, 50))), 0.5, np.random.default_rng(0)).value
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert out.mean() == pytest.approx(1.0, abs=0.05)

    def test_sparse(self):
        s = sp.random(100, 80, density=0.3, random_state=0, format="csr")
        out = dropout_sparse(s, 0.5, np.random.default_rng(1))
        ratio = out.data[out.data != 0] / s.data[out.data != 0]
        np.testing.assert_allclose(ratio, 2.0)
        assert s.data.min() > 0  # input untouched


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-50, 50)))
def test_softmax_rows_simplex(a):
    s = softmax_rows(a)
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)


class TestAdam:
    def test_first_step(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        p.grad = np.array([1.0])
        adam_step(AdamState(lr=0.1), {"w": p})
        assert p.value[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)

    def test_zero_gradient(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        st_ = AdamState(lr=0.1)
        p.grad = np.array([1.0, 1.0])
        st_.step({"w": p})
        m_before = st_.m["w"].copy()
        v_before = st_.v["w"].copy()
        p.grad = np.zeros(2)
        st_.step({"w": p})
        np.testing.assert_allclose(st_.m["w"], 0.9 * m_before)
        np.testing.assert_allclose(st_.v["w"], 0.999 * v_before)
        # with a zero gradient from the start nothing moves
        q = Tensor(np.array([3.0]), requires_grad=True)
        q.grad = np.zeros(1)
        AdamState(lr=0.1).step({"q": q})
        assert q.value[0] == 3.0
        assert st_.step_count == 2

    def test_identical_params_identical_updates(self, rng):
        g = rng.standard_normal((3, 4))
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones((3, 4)), requires_grad=True)
        st_ = AdamState()
        for _ in range(5):
            a.grad, b.grad = g.copy(), g.copy()
            st_.step({"a": a, "b": b})
        assert np.array_equal(a.value, b.value)

    def test_non_finite_gradient_names_parameter(self):
        p = Tensor(np.ones(2), requires_grad=True)
        p.grad = np.array([1.0, np.nan])
        with pytest.raises(FloatingPointError, match="layer.w"):
            AdamState().step({"layer.w": p})

    def test_missing_gradient(self):
        with pytest.raises(ValueError, match="missing gradient"):
            AdamState().step({"b": Tensor(np.ones(2), requires_grad=True)})

    def test_bias_correction_matches_formula(self, rng):
        p = Tensor(np.zeros(4), requires_grad=True)
        st_ = AdamState(lr=0.01)
        grads = [rng.standard_normal(4) for _ in range(3)]
        m = v = np.zeros(4)
        want = np.zeros(4)
        for t, g in enumerate(grads, 1):
            p.grad = g
            st_.step({"p": p})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            want = want - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.value, want, rtol=1e-14)
