"""Tensor core: forward primitives, backward pass, grad_check, Adam."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vgekit import tensor as T
from vgekit.optim import AdamState, adam_step


def numeric_gradient(f, arrays, eps=1e-5):
    """Central finite differences of a scalar function of numpy arrays."""
    grads = [np.zeros_like(a) for a in arrays]
    for i, a in enumerate(arrays):
        flat = a.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = f(arrays)
            flat[j] = orig - eps
            lo = f(arrays)
            flat[j] = orig
            grads[i].ravel()[j] = (hi - lo) / (2 * eps)
    return grads


class TestForwardOps:
    def test_matmul_identity(self):
        g = T.Graph()
        x = np.arange(12.0).reshape(3, 4)
        out = T.matmul(g.constant(np.eye(3)), g.constant(x))
        np.testing.assert_array_equal(out.data, x)

    def test_matmul_shape_error_names_op(self):
        g = T.Graph()
        a = g.constant(np.ones((2, 3)))
        b = g.constant(np.ones((4, 2)))
        with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(4, 2\)"):
            T.matmul(a, b)

    def test_softmax_symmetry(self):
        g = T.Graph()
        out = T.softmax(g.constant([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=0, atol=0)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(0)
        g = T.Graph()
        out = T.softmax(g.constant(rng.normal(size=(5, 7))), axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(5), atol=1e-12)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_l2_normalize_345(self):
        g = T.Graph()
        out = T.l2_normalize(g.constant([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-15)

    def test_l2_normalize_zero_vector_errors(self):
        g = T.Graph()
        with pytest.raises(ValueError, match="zero-norm input"):
            T.l2_normalize(g.constant([0.0, 0.0]))

    def test_nonfinite_output_rejected(self):
        g = T.Graph()
        big = g.constant(np.full((2, 2), 1e308))
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError, match="add"):
            T.add(big, big)

    def test_matmul_associativity(self):
        rng = np.random.default_rng(1)
        a, b, c = (rng.normal(size=(4, 5)), rng.normal(size=(5, 6)),
                   rng.normal(size=(6, 3)))
        g = T.Graph()
        ta, tb, tc = g.constant(a), g.constant(b), g.constant(c)
        left = T.matmul(T.matmul(ta, tb), tc).data
        right = T.matmul(ta, T.matmul(tb, tc)).data
        np.testing.assert_allclose(left, right, rtol=1e-10)

    def test_masked_sum(self):
        g = T.Graph()
        a = g.constant(np.arange(6.0).reshape(2, 3))
        mask = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        assert T.masked_sum(a, mask).item() == 0.0 + 2.0 + 4.0

    def test_mixed_graph_rejected(self):
        g1, g2 = T.Graph(), T.Graph()
        with pytest.raises(ValueError, match="different graphs"):
            T.add(g1.constant([1.0]), g2.constant([1.0]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        g = T.Graph()
        x = g.tensor(np.arange(5.0), requires_grad=True)
        g.backward(T.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_dot_gradient_is_2x(self):
        g = T.Graph()
        x = g.tensor([1.0, 2.0], requires_grad=True)
        g.backward(T.dot(x, x))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        g = T.Graph()
        x = g.tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            g.backward(T.smul(x, 2.0))

    def test_two_layer_tanh_net_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        w1 = rng.normal(size=(4, 6)) * 0.5
        w2 = rng.normal(size=(6, 1)) * 0.5
        x = rng.normal(size=(3, 4))

        def forward(arrays):
            g = T.Graph()
            t1 = g.tensor(arrays[0], requires_grad=True)
            t2 = g.tensor(arrays[1], requires_grad=True)
            h = T.tanh(T.matmul(g.constant(x), t1))
            out = T.tanh(T.matmul(h, t2))
            return g, [t1, t2], T.sum_all(T.mul(out, out))

        g, leaves, loss = forward([w1, w2])
        g.backward(loss)
        analytic = [leaf.grad for leaf in leaves]

        def value(arrays):
            _, _, node = forward(arrays)
            return float(node.data)

        numeric = numeric_gradient(value, [w1.copy(), w2.copy()], eps=1e-5)
        for a, n in zip(analytic, numeric):
            rel = np.abs(a - n) / np.maximum(1.0, np.abs(n))
            assert rel.max() < 1e-4

    def test_backward_twice_bit_identical(self):
        rng = np.random.default_rng(3)
        g = T.Graph()
        w = g.tensor(rng.normal(size=(5, 5)), requires_grad=True)
        x = g.constant(rng.normal(size=(5, 5)))
        loss = T.sum_all(T.tanh(T.matmul(T.matmul(x, w), T.transpose(w))))
        g.backward(loss)
        first = w.grad.copy()
        g.backward(loss)
        assert np.array_equal(first, w.grad)

    def test_gather_rows_accumulates_repeated_indices(self):
        g = T.Graph()
        e = g.tensor(np.zeros((3, 2)) + [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
                     requires_grad=True)
        out = T.gather_rows(e, [0, 1, 0])
        g.backward(T.sum_all(out))
        np.testing.assert_array_equal(e.grad, [[2.0, 2.0], [1.0, 1.0], [0.0, 0.0]])


class TestGradCheck:
    def test_quadratic_norm_is_exact(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=7)
        err = T.grad_check(lambda ps: T.smul(T.dot(ps[0], ps[0]), 0.5), [x])
        assert err < 1e-8

    def test_grad_check_covers_all_primitives(self):
        # One composite touching every differentiable primitive.
        rng = np.random.default_rng(11)
        a = rng.normal(size=(3, 4)) * 0.7
        b = rng.normal(size=(4, 4)) * 0.7
        bias = rng.normal(size=4)
        col = rng.normal(size=3)
        vec = rng.normal(size=4)
        mask = np.array([[1.0, 0.0, 1.0, 1.0], [1.0, 1.0, 0.0, 1.0],
                         [0.0, 1.0, 1.0, 1.0]])

        def f(ps):
            ta, tb, tbias, tcol, tvec = ps
            m = T.matmul(ta, tb)
            m = T.add_bias(m, tbias)
            m = T.add_colvec(m, tcol)
            m = T.mul_colvec(T.tanh(m), T.reshape(T.sigmoid(tcol), (3,)))
            m = T.concat([m, T.relu(m)], axis=1)
            m = T.slice_cols(m, 1, 5)
            m = T.softmax(m, axis=1)
            m = T.l2_normalize(T.sadd(m, 0.5), axis=1)
            sq = T.matmul(m, T.transpose(m))
            d = T.diag_part(T.smul(sq, 0.5))
            picked = T.gather_rows(T.sub(m, T.smul(m, 0.25)), [2, 0, 1])
            total = T.add(T.sum_all(T.mul(picked, picked)), T.sum_all(d))
            total = T.add(total, T.masked_sum(m, mask))
            return T.add(total, T.dot(tvec, tvec))

        err = T.grad_check(f, [a, b, bias, col, vec], eps=1e-6)
        assert err < 1e-7

    def test_bad_eps_rejected(self):
        with pytest.raises(ValueError, match="eps"):
            T.grad_check(lambda ps: T.sum_all(ps[0]), [np.ones(2)], eps=0.0)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        state = AdamState()
        params = {"w": np.array([1.0, -2.0])}
        state.m["w"] = np.array([0.5, 0.5])
        state.v["w"] = np.array([0.25, 0.25])
        out = adam_step(state, params, {"w": np.zeros(2)}, lr=0.1)
        # With zero gradient the moments decay geometrically.
        np.testing.assert_allclose(state.m["w"], [0.45, 0.45])
        np.testing.assert_allclose(state.v["w"], [0.249750, 0.249750])
        assert state.step == 1
        # Update is driven by the stale moment, so params move, but with fresh
        # zero moments params stay exactly put:
        fresh = AdamState()
        out = adam_step(fresh, {"w": np.array([3.0])}, {"w": np.zeros(1)}, lr=0.1)
        np.testing.assert_array_equal(out["w"], [3.0])

    def test_constant_gradient_reaches_sign_fixed_point(self):
        state = AdamState()
        params = {"w": np.array([0.0, 0.0])}
        grad = {"w": np.array([0.3, -1.7])}
        lr = 1e-3
        prev = params
        for _ in range(2000):
            nxt = adam_step(state, prev, grad, lr)
            step = nxt["w"] - prev["w"]
            prev = nxt
        np.testing.assert_allclose(step, [-lr, lr], rtol=1e-6)

    def test_nan_gradient_identifies_parameter(self):
        state = AdamState()
        with pytest.raises(FloatingPointError, match="'w2'"):
            adam_step(state, {"w2": np.ones(2)}, {"w2": np.array([1.0, np.nan])},
                      lr=0.1)

    def test_quadratic_bowl_converges(self):
        rng = np.random.default_rng(9)
        target = rng.normal(size=6)
        params = {"x": target + 1.0}
        state = AdamState()
        losses = []
        for _ in range(500):
            diff = params["x"] - target
            losses.append(float(diff @ diff))
            params = adam_step(state, params, {"x": 2 * diff}, lr=1e-2)
        losses = np.array(losses)
        assert losses[-1] < 1e-4 * losses[0]
        # Monotone descent from warmup until the loss first dips below
        # 1e-4 of its start (past that point Adam dithers at the FP floor).
        crossing = int(np.argmax(losses < 1e-4 * losses[0]))
        warmup = 20
        assert crossing > warmup
        assert np.all(np.diff(losses[warmup:crossing + 1]) <= 0.0)

    def test_bad_lr_rejected(self):
        with pytest.raises(ValueError, match="lr"):
            adam_step(AdamState(), {"w": np.ones(1)}, {"w": np.ones(1)}, lr=0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-15, max_value=15), min_size=2, max_size=8))
def test_softmax_properties(values):
    g = T.Graph()
    out = T.softmax(g.constant(values)).data
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.all(out > 0) and np.all(out < 1)
