"""Backward pass: policies, hand-checkable gradients, finite differences,
and the Adam update."""

import numpy as np
import pytest

from canopy import gradcheck
from canopy import tensor as T
from canopy.optim import Adam, make_param
from canopy.tensor import Tensor


class TestBackwardPolicies:
    def test_non_scalar_rejected(self):
        x = make_param(np.ones((2, 2), np.float32))
        out = T.relu(x)
        with pytest.raises(ValueError, match="scalar"):
            T.backward(out)

    def test_sum_of_product_grad_is_other_factor(self):
        rng = np.random.default_rng(0)
        xv = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        w = make_param(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
        loss = T.sum_all(T.multiply(w, Tensor(xv)))
        T.backward(loss)
        np.testing.assert_allclose(w.grad, xv, rtol=1e-6)

    def test_zero_loss_means_zero_grads(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
        w = make_param(rng.standard_normal((1, 2, 3, 3)).astype(np.float32))
        b = make_param(np.zeros(1, np.float32))
        pred = T.conv2d(x, w, b)
        loss = T.mse_loss(pred, pred.data.copy())
        T.backward(loss)
        assert float(loss.data) == 0.0
        np.testing.assert_array_equal(w.grad, 0.0)
        np.testing.assert_array_equal(b.grad, 0.0)

    def test_repeated_backward_accumulates_on_leaves(self):
        w = make_param(np.array([2.0, -1.0], np.float32))
        loss = T.sum_all(T.multiply(w, Tensor(np.array([3.0, 5.0], np.float32))))
        T.backward(loss)
        first = w.grad.copy()
        T.backward(loss)
        np.testing.assert_allclose(w.grad, 2 * first)

    def test_no_grad_blocks_taping(self):
        w = make_param(np.ones(3, np.float32))
        with T.no_grad():
            out = T.relu(w)
        assert out._parents == ()
        assert not out.requires_grad


class TestFiniteDifferences:
    @pytest.mark.parametrize("seed", range(5))
    def test_all_ops(self, seed):
        for res in gradcheck.check_ops(seed):
            assert res.ok, f"{res.name} seed {seed}: rel err {res.rel_err:.2e}"

    def test_batchnorm_reference_shape(self):
        # rel err < 1e-3 on a random 2x4x4x3-sized input (planar 2,3,4,4)
        results = {r.name: r for r in gradcheck.check_ops(123)}
        assert results["batchnorm_train"].rel_err < 1e-3

    def test_combined_loss_linearity(self):
        rng = np.random.default_rng(7)
        from canopy.train import combined_loss

        pred = make_param(rng.standard_normal((1, 1, 4, 4)))
        att_raw = make_param(rng.standard_normal((1, 1, 4, 4)))
        target = rng.uniform(0, 1, (1, 1, 4, 4))
        mask = (target > 0.3).astype(np.float64)

        def build(alpha):
            att = T.sigmoid(att_raw)
            return combined_loss(pred, att, target, mask, alpha)

        for p in (pred, att_raw):
            p.zero_grad()
        T.backward(build(0.0))
        g_mse = att_raw.grad.copy(), pred.grad.copy()
        for p in (pred, att_raw):
            p.zero_grad()
        T.backward(T.scale(T.bce_loss(T.sigmoid(att_raw), mask), 1.0))
        g_bce_att = att_raw.grad.copy()
        for p in (pred, att_raw):
            p.zero_grad()
        alpha = 0.37
        T.backward(build(alpha))
        np.testing.assert_allclose(att_raw.grad, g_mse[0] + alpha * g_bce_att,
                                   rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(pred.grad, g_mse[1], rtol=1e-6)


class TestAdam:
    def test_zero_grad_leaves_param_unchanged(self):
        p = make_param(np.array([1.0, 2.0], np.float32), name="p")
        opt = Adam({"p": p}, lr=0.1)
        p.grad = np.zeros_like(p.data)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_single_step_moves_by_lr(self):
        # constant unit gradient, one step from t=0: bias-corrected update
        # is lr * 1 / (1 + eps), i.e. a decrease of almost exactly lr
        p = make_param(np.array([0.5], np.float32), name="p")
        lr = 1e-2
        opt = Adam({"p": p}, lr=lr, eps=1e-7)
        p.grad = np.ones(1, np.float32)
        opt.step()
        assert 0.5 - p.data[0] == pytest.approx(lr / (1 + 1e-7), rel=1e-5)

    def test_sign_flip_keeps_second_moment_positive(self):
        p = make_param(np.array([0.0], np.float32), name="p")
        opt = Adam({"p": p}, lr=1e-3)
        p.grad = np.ones(1, np.float32)
        opt.step()
        p.grad = -np.ones(1, np.float32)
        opt.step()
        assert opt.state["p"].v[0] > 0.0
        assert opt.t == 2

    def test_non_finite_gradient_names_parameter(self):
        p = make_param(np.zeros(2, np.float32), name="weights.w")
        opt = Adam({"weights.w": p})
        p.grad = np.array([np.nan, 0.0], np.float32)
        with pytest.raises(ValueError, match="weights.w"):
            opt.step()

    def test_lr_zero_is_identity(self):
        rng = np.random.default_rng(3)
        p = make_param(rng.standard_normal(5).astype(np.float32), name="p")
        before = p.data.copy()
        opt = Adam({"p": p}, lr=0.0)
        p.grad = rng.standard_normal(5).astype(np.float32)
        opt.step()
        np.testing.assert_array_equal(p.data, before)
