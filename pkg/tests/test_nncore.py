import math

import numpy as np
import pytest

import tracemend.nncore as nn
from oracles import fd_gradients, norm_relative_error
from tracemend.errors import ShapeError, TapeError

RNG = np.random.default_rng(1234)


def param(shape, scale=1.0, name="p", seed=None):
    r = np.random.default_rng(seed) if seed is not None else RNG
    return nn.Parameter((r.standard_normal(shape) * scale).astype(np.float32), name)


def check_grad(build_loss, params, tol=1e-3, h=1e-2):
    """Analytic vs central-difference gradients, norm-based relative error."""
    loss = build_loss()
    loss.backward()
    for p in params:
        analytic = p.grad.copy()
        fd = fd_gradients(lambda: float(build_loss().data), p, h_base=h)
        err = norm_relative_error(analytic, fd)
        assert err < tol, f"{p.name}: rel err {err:.2e}"
        p.zero_grad()


class TestMatmul:
    def test_identity(self):
        a = nn.Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        out = nn.matmul(a, nn.Tensor(np.eye(3, dtype=np.float32)))
        assert np.allclose(out.data, a.data)

    def test_one_by_one(self):
        out = nn.matmul(nn.Tensor([[2.0]]), nn.Tensor([[3.0]]))
        assert out.data[0, 0] == pytest.approx(6.0)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            nn.matmul(nn.Tensor(np.zeros((2, 3))), nn.Tensor(np.zeros((2, 2))))

    def test_gradients_match_finite_differences(self):
        a = param((3, 4), name="a", seed=2)
        b = param((4, 2), name="b", seed=3)
        check_grad(lambda: nn.sum_all(nn.matmul(a, b)), [a, b])

    def test_batched_gradients(self):
        a = param((2, 3, 4), name="a", seed=4)
        b = param((4, 2), name="b", seed=5)
        w = nn.Tensor(RNG.standard_normal((2, 3, 2)).astype(np.float32))
        check_grad(lambda: nn.sum_all(nn.mul(nn.matmul(a, b), w)), [a, b])


class TestSoftmax:
    def test_constant_row_uniform(self):
        out = nn.softmax_lastdim(nn.Tensor(np.full((2, 4), 3.0)))
        assert np.allclose(out.data, 0.25, atol=1e-6)

    def test_hand_evaluated_ratio(self):
        # exp(0)=1, exp(ln 3)=3 -> [1/4, 3/4]
        out = nn.softmax_lastdim(nn.Tensor([[0.0, math.log(3.0)]]))
        assert np.allclose(out.data, [[0.25, 0.75]], atol=1e-6)

    def test_rows_sum_to_one(self):
        x = nn.Tensor(RNG.standard_normal((5, 7)).astype(np.float32) * 10)
        out = nn.softmax_lastdim(x)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_stable_under_large_inputs(self):
        out = nn.softmax_lastdim(nn.Tensor([[1000.0, 1000.0]]))
        assert np.allclose(out.data, 0.5)

    def test_gradients(self):
        x = param((3, 5), name="x", seed=6)
        w = nn.Tensor(RNG.standard_normal((3, 5)).astype(np.float32))
        check_grad(lambda: nn.sum_all(nn.mul(nn.softmax_lastdim(x), w)), [x])


class TestLayerNorm:
    def test_constant_features_zero_out(self):
        x = nn.Tensor(np.full((2, 4), 7.0))
        gain = nn.Parameter(np.ones(4, dtype=np.float32), "g")
        bias = nn.Parameter(np.zeros(4, dtype=np.float32), "b")
        out = nn.layer_norm(x, gain, bias)
        assert np.allclose(out.data, 0.0, atol=1e-4)

    def test_standardizes_last_dim(self):
        x = nn.Tensor(RNG.standard_normal((6, 16)).astype(np.float32) * 4 + 2)
        gain = nn.Parameter(np.ones(16, dtype=np.float32), "g")
        bias = nn.Parameter(np.zeros(16, dtype=np.float32), "b")
        out = nn.layer_norm(x, gain, bias)
        assert np.abs(out.data.mean(axis=-1)).max() < 1e-5
        assert np.allclose(out.data.var(axis=-1), 1.0, atol=1e-3)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nn.layer_norm(nn.Tensor(np.zeros((2, 4))),
                          nn.Parameter(np.ones(3, dtype=np.float32), "g"),
                          nn.Parameter(np.zeros(4, dtype=np.float32), "b"))

    def test_gradients(self):
        x = param((2, 6), name="x", seed=7)
        gain = param((6,), name="gain", seed=8)
        bias = param((6,), name="bias", seed=9)
        w = nn.Tensor(RNG.standard_normal((2, 6)).astype(np.float32))
        check_grad(lambda: nn.sum_all(nn.mul(nn.layer_norm(x, gain, bias), w)),
                   [x, gain, bias])


class TestFfn:
    def test_zero_weights_yield_bias(self):
        x = nn.Tensor(RNG.standard_normal((2, 4)).astype(np.float32))
        w1 = nn.Parameter(np.zeros((4, 8), dtype=np.float32), "w1")
        b1 = nn.Parameter(np.zeros(8, dtype=np.float32), "b1")
        w2 = nn.Parameter(np.zeros((8, 4), dtype=np.float32), "w2")
        b2 = nn.Parameter(np.full(4, 0.5, dtype=np.float32), "b2")
        out = nn.ffn(x, w1, b1, w2, b2)
        assert np.allclose(out.data, 0.5)

    def test_relu_suppresses_negative_preactivations(self):
        x = nn.Tensor([[1.0]])
        w1 = nn.Parameter(np.array([[-2.0]], dtype=np.float32), "w1")
        b1 = nn.Parameter(np.zeros(1, dtype=np.float32), "b1")
        w2 = nn.Parameter(np.array([[5.0]], dtype=np.float32), "w2")
        b2 = nn.Parameter(np.zeros(1, dtype=np.float32), "b2")
        assert nn.ffn(x, w1, b1, w2, b2).data[0, 0] == 0.0

    def test_gradients(self):
        # keep pre-activations away from the ReLU kink
        x = nn.Tensor((RNG.standard_normal((3, 4)) + 2.0).astype(np.float32))
        w1 = param((4, 6), name="w1", seed=10, scale=0.5)
        b1 = nn.Parameter(np.full(6, 0.7, dtype=np.float32), "b1")
        w2 = param((6, 4), name="w2", seed=11, scale=0.5)
        b2 = param((4,), name="b2", seed=12)
        check_grad(lambda: nn.sum_all(nn.ffn(x, w1, b1, w2, b2)),
                   [w1, b1, w2, b2], h=3e-3)


class TestEmbedding:
    def test_lookup_returns_rows(self):
        table = param((5, 4), name="table", seed=13)
        out = nn.embedding_lookup(table, np.array([2]))
        assert np.allclose(out.data, table.data[2])

    def test_repeated_ids_accumulate_gradient(self):
        table = param((5, 4), name="table", seed=14)
        out = nn.embedding_lookup(table, np.array([1, 1, 1]))
        nn.sum_all(out).backward()
        assert np.allclose(table.grad[1], 3.0)
        assert np.allclose(table.grad[0], 0.0)

    def test_out_of_range_id(self):
        table = param((5, 4), name="table")
        with pytest.raises(IndexError):
            nn.embedding_lookup(table, np.array([5]))

    def test_gradients(self):
        table = param((5, 4), name="table", seed=15)
        ids = np.array([[0, 2, 2], [4, 1, 0]])
        w = nn.Tensor(RNG.standard_normal((2, 3, 4)).astype(np.float32))
        check_grad(lambda: nn.sum_all(nn.mul(nn.embedding_lookup(table, ids), w)),
                   [table])

    def test_one_hot_equivalence(self):
        table = param((6, 3), name="table", seed=16)
        ids = np.array([1, 4, 4, 0])
        onehot = np.zeros((4, 6), dtype=np.float32)
        onehot[np.arange(4), ids] = 1.0
        assert np.allclose(nn.embedding_lookup(table, ids).data,
                           onehot @ table.data)


class TestBceLoss:
    def test_half_probability(self):
        p = nn.Tensor(np.array([0.5], dtype=np.float32))
        assert float(nn.bce_loss(p, np.array([1.0])).data) == pytest.approx(
            math.log(2.0), rel=1e-5)

    def test_confident_correct_is_near_zero(self):
        p = nn.Tensor(np.array([1.0 - 1e-7], dtype=np.float32))
        assert float(nn.bce_loss(p, np.array([1.0])).data) < 1e-5

    def test_gradient_formula(self):
        # dL/dp = (p - y) / (p (1 - p)); p=0.3, y=0 -> 1/0.7
        p = nn.Parameter(np.array([0.3], dtype=np.float32), "p")
        nn.bce_loss(p, np.array([0.0])).backward()
        assert p.grad[0] == pytest.approx(1.0 / 0.7, rel=1e-4)

    def test_gradient_matches_fd(self):
        p = nn.Parameter(np.array([0.3, 0.8], dtype=np.float32), "p")
        check_grad(lambda: nn.bce_loss(p, np.array([0.0, 1.0])), [p], h=1e-3)


class TestCeLoss:
    def test_uniform_logits(self):
        logits = nn.Tensor(np.zeros((1, 4), dtype=np.float32))
        assert float(nn.ce_loss(logits, np.array([2])).data) == pytest.approx(
            math.log(4.0), rel=1e-5)

    def test_confident_logits_near_zero(self):
        logits = np.full((1, 4), -30.0, dtype=np.float32)
        logits[0, 1] = 30.0
        assert float(nn.ce_loss(nn.Tensor(logits), np.array([1])).data) < 1e-5

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            nn.ce_loss(nn.Tensor(np.zeros((1, 4))), np.array([4]))

    def test_target_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nn.ce_loss(nn.Tensor(np.zeros((2, 4))), np.array([1]))

    def test_gradients(self):
        logits = param((3, 5), name="logits", seed=17)
        targets = np.array([0, 3, 2])
        check_grad(lambda: nn.ce_loss(logits, targets), [logits])


class TestBackward:
    def test_sum_of_parameter_gives_ones(self):
        p = param((2, 3), name="p")
        nn.sum_all(p).backward()
        assert np.allclose(p.grad, 1.0)

    def test_gradients_accumulate_exactly_twice(self):
        p = param((4,), name="p", seed=18)
        w = nn.Tensor(np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32))

        def loss():
            return nn.sum_all(nn.mul(nn.mul(p, p), w))

        loss().backward()
        once = p.grad.copy()
        loss().backward()
        assert np.allclose(p.grad, 2.0 * once)

    def test_diamond_reuse_accumulates(self):
        p = nn.Parameter(np.array([3.0], dtype=np.float32), "p")
        out = nn.add(nn.mul(p, 2.0), nn.mul(p, 5.0))
        nn.sum_all(out).backward()
        assert p.grad[0] == pytest.approx(7.0)

    def test_unreachable_parameter_stays_zero(self):
        p = param((2,), name="p")
        q = param((2,), name="q")
        nn.sum_all(nn.mul(p, 2.0)).backward()
        assert np.allclose(q.grad, 0.0)

    def test_detached_node_raises(self):
        with pytest.raises(TapeError):
            nn.Tensor(np.zeros(3)).backward()


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = param((3,), name="p", seed=19)
        before = p.data.copy()
        nn.Adam([p]).step()
        assert np.allclose(p.data, before)

    def test_first_step_magnitude_is_lr(self):
        # hand evaluation at t=1: m_hat = g, v_hat = g^2,
        # update = lr * g / (|g| + eps) ~= lr * sign(g)
        p = nn.Parameter(np.array([1.0, -2.0], dtype=np.float32), "p")
        p.grad = np.array([0.5, -0.25], dtype=np.float32)
        opt = nn.Adam([p], lr=1e-3)
        before = p.data.copy()
        opt.step()
        delta = p.data - before
        assert np.allclose(np.abs(delta), 1e-3, rtol=1e-4)
        assert delta[0] < 0 < delta[1]

    def test_gradients_zeroed_after_step(self):
        p = param((2,), name="p")
        p.grad = np.ones(2, dtype=np.float32)
        nn.Adam([p]).step()
        assert np.allclose(p.grad, 0.0)

    def test_deterministic_trajectory(self):
        def run():
            r = np.random.default_rng(5)
            p = nn.Parameter(r.standard_normal(4).astype(np.float32), "p")
            opt = nn.Adam([p], lr=1e-2)
            for _ in range(20):
                nn.sum_all(nn.mul(p, p)).backward()
                opt.step()
            return p.data.copy()

        assert np.array_equal(run(), run())


class TestInit:
    def test_zeros_scheme(self):
        out = nn.init_params((3, 3), np.random.default_rng(0), "zeros")
        assert not out.any()

    def test_uniform_bound(self):
        out = nn.init_params((4, 4), np.random.default_rng(1))
        bound = math.sqrt(6.0 / 8.0)
        assert np.all(np.abs(out) <= bound)
        assert out.dtype == np.float32

    def test_seeded_determinism(self):
        a = nn.init_params((5, 2), np.random.default_rng(9))
        b = nn.init_params((5, 2), np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestMiscOps:
    def test_concat_and_slice_gradients(self):
        a = param((2, 3, 2), name="a", seed=20)
        b = param((2, 3, 3), name="b", seed=21)

        def loss():
            cat = nn.concat_lastdim([a, b])
            return nn.sum_all(nn.mul(nn.slice_seq(cat, 1, 3), 1.5))

        check_grad(loss, [a, b])

    def test_transpose_gradients(self):
        a = param((2, 3, 4), name="a", seed=22)
        w = nn.Tensor(RNG.standard_normal((2, 4, 3)).astype(np.float32))
        check_grad(lambda: nn.sum_all(nn.mul(nn.transpose_last2(a), w)), [a])

    def test_sigmoid_values_and_gradients(self):
        x = param((5,), name="x", seed=23)
        out = nn.sigmoid(nn.Tensor(np.array([0.0], dtype=np.float32)))
        assert out.data[0] == pytest.approx(0.5)
        w = nn.Tensor(RNG.standard_normal(5).astype(np.float32))
        check_grad(lambda: nn.sum_all(nn.mul(nn.sigmoid(x), w)), [x])

    def test_reshape_round_trip_gradient(self):
        a = param((2, 6), name="a", seed=24)
        check_grad(lambda: nn.sum_all(nn.mul(nn.reshape(a, (3, 4)), 2.0)), [a])

    def test_add_broadcast_bias(self):
        x = param((2, 3, 4), name="x", seed=25)
        bias = param((4,), name="bias", seed=26)
        check_grad(lambda: nn.sum_all(nn.add(x, bias)), [x, bias])
