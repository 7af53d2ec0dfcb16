import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from prgan import autodiff as ad
from prgan.autodiff.checkpoint import MAGIC


def weighted_sum(node, weights):
    """Scalar probe with non-uniform weights so every output element matters."""
    return ad.sum_all(ad.mul(node, ad.Node(np.asarray(weights, np.float64))))


def away_from_zero(rng, shape, margin=1e-2):
    x = rng.uniform(-1, 1, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


class TestNode:
    def test_grad_starts_at_zero(self):
        p = ad.parameter(np.ones((2, 3)))
        assert p.grad.shape == (2, 3)
        assert not p.grad.any()

    def test_sum_gives_all_ones(self):
        x = ad.parameter(np.arange(6.0).reshape(2, 3))
        ad.backward(ad.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_at_three(self):
        x = ad.parameter(np.array([3.0]))
        ad.backward(ad.mul(x, x))
        assert x.grad[0] == 6.0

    def test_second_backward_doubles(self):
        x = ad.parameter(np.array([1.0, -2.0]))
        root = ad.sum_all(ad.scale(x, 3.0))
        ad.backward(root)
        ad.backward(root)
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])
        x.zero_grad()
        ad.backward(root)
        np.testing.assert_array_equal(x.grad, [3.0, 3.0])

    def test_non_scalar_root_rejected(self):
        x = ad.parameter(np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(ad.relu(x))

    def test_shared_subgraph_accumulates(self):
        x = ad.parameter(np.array([2.0]))
        y = ad.mul(x, x)
        ad.backward(ad.add(y, y))
        assert x.grad[0] == 8.0

    def test_float32_default(self):
        assert ad.as_value([1, 2, 3]).dtype == np.float32
        assert ad.as_value(np.zeros(2, np.float64)).dtype == np.float64


class TestFullyConnected:
    @pytest.mark.parametrize("n_out, n_in", [(512, 200), (201, 512), (1, 4096)])
    def test_single_row_matches_batch_bitwise(self, n_out, n_in, rng):
        x = rng.uniform(-1, 1, (19, n_in)).astype(np.float32)
        W = rng.normal(0, 0.02, (n_out, n_in)).astype(np.float32)
        b = np.zeros(n_out, np.float32)
        full = ad.fully_connected(x, W, b).value
        for i in range(19):
            np.testing.assert_array_equal(ad.fully_connected(x[i:i + 1], W, b).value[0], full[i])
            np.testing.assert_array_equal(ad.fully_connected(x[i], W, b).value, full[i])

    def test_identity(self):
        y = ad.fully_connected(np.array([1.0, 2.0, 3.0]), np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(y.value, [1, 2, 3])

    def test_zero_weights_give_bias(self):
        y = ad.fully_connected(np.array([4.0, -1.0]), np.zeros((1, 2)), np.array([5.0]))
        np.testing.assert_array_equal(y.value, [5.0])

    def test_mismatch_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(4, 7\)") as info:
            ad.fully_connected(np.ones(5), np.ones((4, 7)), np.zeros(4))
        assert "(5,)" in str(info.value)

    def test_gradcheck_sum(self, rng):
        W = rng.normal(size=(4, 7))
        x = rng.normal(size=7)
        b = rng.normal(size=4)
        assert ad.gradcheck(lambda W, x, b: ad.sum_all(ad.fully_connected(x, W, b)), [W, x, b]) < 1e-3

    def test_gradcheck_batched(self, rng):
        W, x, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=3)
        w = rng.normal(size=(4, 3))
        assert ad.gradcheck(lambda W, x, b: weighted_sum(ad.fully_connected(x, W, b), w), [W, x, b]) < 1e-3

    def test_composite_fc_relu_sum(self, rng):
        W = rng.normal(size=(6, 4))
        x = rng.normal(size=4)
        b = rng.normal(size=6)
        # keep every pre-activation away from the kink
        pre = W @ x + b
        b = np.where(np.abs(pre) < 0.05, b + 0.2, b)
        err = ad.gradcheck(lambda W, x, b: ad.sum_all(ad.relu(ad.fully_connected(x, W, b))), [W, x, b])
        assert err < 1e-3


class TestConv:
    def test_ones_with_unit_kernel(self):
        y = ad.conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(y.value, np.ones((1, 1, 2, 2)))

    def test_zero_input(self, rng):
        y = ad.conv2d(np.zeros((1, 2, 8, 8)), rng.normal(size=(3, 2, 5, 5)), np.zeros(3))
        assert y.shape == (1, 3, 4, 4)
        assert not y.value.any()

    def test_conv3d_constant(self):
        y = ad.conv3d(np.full((1, 1, 4, 4, 4), 2.5), np.ones((1, 1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(y.value, np.full((1, 1, 2, 2, 2), 2.5))

    def test_conv3d_zero_kernels(self, rng):
        y = ad.conv3d(rng.normal(size=(2, 1, 4, 4, 4)), np.zeros((2, 1, 5, 5, 5)), np.zeros(2))
        assert not y.value.any()

    def test_odd_extent_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            ad.conv2d(np.ones((1, 1, 5, 4)), np.ones((1, 1, 5, 5)), np.zeros(1))

    def test_matches_direct_loop(self, rng):
        x = rng.normal(size=(2, 3, 6, 6))
        W = rng.normal(size=(4, 3, 5, 5))
        b = rng.normal(size=4)
        y = ad.conv2d(x, W, b).value
        xp = np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)))
        ref = np.zeros((2, 4, 3, 3))
        for n in range(2):
            for o in range(4):
                for r in range(3):
                    for c in range(3):
                        ref[n, o, r, c] = np.sum(xp[n, :, 2 * r:2 * r + 5, 2 * c:2 * c + 5] * W[o]) + b[o]
        np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)

    def test_gradcheck_conv2d(self, rng):
        x, W, b = rng.normal(size=(1, 2, 8, 8)), rng.normal(size=(3, 2, 5, 5)), rng.normal(size=3)
        w = rng.normal(size=(1, 3, 4, 4))
        assert ad.gradcheck(lambda x, W, b: weighted_sum(ad.conv2d(x, W, b), w), [x, W, b]) < 1e-3

    def test_gradcheck_conv3d(self, rng):
        x, W, b = rng.normal(size=(1, 1, 4, 4, 4)), rng.normal(size=(2, 1, 5, 5, 5)), rng.normal(size=2)
        w = rng.normal(size=(1, 2, 2, 2, 2))
        assert ad.gradcheck(lambda x, W, b: weighted_sum(ad.conv3d(x, W, b), w), [x, W, b]) < 1e-3


class TestTransposedConv:
    def test_zero_input_doubles(self, rng):
        y = ad.transposed_conv3d(np.zeros((1, 2, 4, 4, 4)), rng.normal(size=(2, 3, 5, 5, 5)), np.zeros(3))
        assert y.shape == (1, 3, 8, 8, 8)
        assert not y.value.any()

    def test_ladder_shape(self):
        W = np.zeros((256, 2, 5, 5, 5), np.float32)
        y = ad.transposed_conv3d(np.zeros((1, 256, 4, 4, 4), np.float32), W, np.zeros(2, np.float32))
        assert y.shape == (1, 2, 8, 8, 8)

    @given(s=st.integers(1, 6), seed=st.integers(0, 2**16))
    def test_adjoint_of_conv(self, s, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(3, 2, 5, 5))
        x = rng.normal(size=(2, 2, 2 * s, 2 * s))
        y = rng.normal(size=(2, 3, s, s))
        lhs = np.vdot(ad.conv2d(x, W, np.zeros(3)).value, y)
        rhs = np.vdot(x, ad.transposed_conv2d(y, W, np.zeros(2)).value)
        assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-9)

    def test_gradcheck(self, rng):
        x, W, b = rng.normal(size=(1, 1, 2, 2, 2)), rng.normal(size=(1, 2, 5, 5, 5)), rng.normal(size=2)
        w = rng.normal(size=(1, 2, 4, 4, 4))
        assert ad.gradcheck(lambda x, W, b: weighted_sum(ad.transposed_conv3d(x, W, b), w), [x, W, b]) < 1e-3

    def test_gradcheck_2d(self, rng):
        x, W, b = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 1, 5, 5)), rng.normal(size=1)
        w = rng.normal(size=(2, 1, 6, 6))
        assert ad.gradcheck(lambda x, W, b: weighted_sum(ad.transposed_conv2d(x, W, b), w), [x, W, b]) < 1e-3

    def test_kernel_rank_checked(self):
        with pytest.raises(ValueError):
            ad.transposed_conv3d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)), np.zeros(1))


class TestBatchnorm:
    def test_train_normalizes(self, rng):
        x = rng.normal(3.0, 2.0, size=(8, 3, 4, 4)).astype(np.float32)
        st_ = ad.BatchNormState(3)
        y = ad.batchnorm(x, np.ones(3, np.float32), np.zeros(3, np.float32), st_).value
        mu = y.mean(axis=(0, 2, 3), dtype=np.float64)
        var = y.var(axis=(0, 2, 3), dtype=np.float64)
        assert np.all(np.abs(mu) < 1e-5)
        assert np.all(np.abs(var - 1) < 1e-3)

    def test_zero_gamma_gives_beta(self, rng):
        beta = np.array([0.5, -1.0], np.float32)
        y = ad.batchnorm(rng.normal(size=(4, 2, 3)), np.zeros(2), beta, ad.BatchNormState(2)).value
        np.testing.assert_array_equal(y, np.broadcast_to(beta.reshape(1, 2, 1), y.shape))

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            ad.batchnorm(np.ones((1, 2, 2)), np.ones(2), np.zeros(2), ad.BatchNormState(2))

    def test_running_stats(self, rng):
        x = rng.normal(2.0, 3.0, size=(16, 1, 8)).astype(np.float32)
        s = ad.BatchNormState(1)
        ad.batchnorm(x, np.ones(1), np.zeros(1), s)
        assert s.running_mean[0] == pytest.approx(0.1 * x.mean(), rel=1e-5)
        assert s.running_var[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1), rel=1e-5)

    def test_eval_uses_running_stats(self):
        s = ad.BatchNormState(1)
        s.running_mean[:] = 2.0
        s.running_var[:] = 4.0
        y = ad.batchnorm(np.full((1, 1, 2), 4.0), np.ones(1), np.zeros(1), s, train=False).value
        np.testing.assert_allclose(y, 1.0 / np.sqrt(1 + 1e-5 / 4), rtol=1e-6)

    def test_update_stats_off(self, rng):
        s = ad.BatchNormState(2)
        ad.batchnorm(rng.normal(size=(4, 2)), np.ones(2), np.zeros(2), s, update_stats=False)
        assert not s.running_mean.any()

    def test_gradcheck(self, rng):
        x = rng.normal(size=(4, 3, 2, 2))
        gamma, beta = rng.normal(size=3), rng.normal(size=3)
        w = rng.normal(size=x.shape)
        s = ad.BatchNormState(3)
        err = ad.gradcheck(lambda x, g, b: weighted_sum(ad.batchnorm(x, g, b, s, update_stats=False), w),
                           [x, gamma, beta])
        assert err < 1e-3

    def test_gradcheck_eval(self, rng):
        s = ad.BatchNormState(2)
        s.running_mean[:] = [0.3, -0.2]
        s.running_var[:] = [1.5, 0.7]
        x, w = rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2, 2))
        err = ad.gradcheck(lambda x, g, b: weighted_sum(ad.batchnorm(x, g, b, s, train=False), w),
                           [x, rng.normal(size=2), rng.normal(size=2)])
        assert err < 1e-3


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ad.sigmoid(np.zeros(1)).value[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        y = ad.sigmoid(np.array([-1e4, 1e4], np.float32)).value
        assert np.all(np.isfinite(y))
        np.testing.assert_array_equal(y, [0.0, 1.0])

    def test_leaky_relu(self):
        assert ad.leaky_relu(np.array([-1.0])).value[0] == pytest.approx(-0.2)

    def test_relu_kink_subgradient(self):
        x = ad.parameter(np.array([0.0, 1.0]))
        ad.backward(ad.sum_all(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    @pytest.mark.parametrize("op", [ad.relu, ad.leaky_relu, ad.sigmoid])
    def test_nan_propagates(self, op):
        assert np.isnan(op(np.array([np.nan, 1.0], np.float32)).value[0])

    @pytest.mark.parametrize("op", [ad.relu, ad.leaky_relu, ad.sigmoid])
    def test_gradcheck(self, op, rng):
        x = away_from_zero(rng, (5, 4))
        w = rng.normal(size=(5, 4))
        assert ad.gradcheck(lambda x: weighted_sum(op(x), w), [x]) < 1e-3

    @pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
    def test_binary_gradcheck(self, op, rng):
        a, b, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        assert ad.gradcheck(lambda a, b: weighted_sum(op(a, b), w), [a, b]) < 1e-3

    def test_shape_ops_gradcheck(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(1, 3))
        w = rng.normal(size=(9,))
        build = lambda a, b: weighted_sum(ad.reshape(ad.concat([a, b], axis=0), (9,)), w)
        assert ad.gradcheck(build, [a, b]) < 1e-3

    def test_scale_and_mean_gradcheck(self, rng):
        x = rng.normal(size=(4, 2))
        assert ad.gradcheck(lambda x: ad.mean_all(ad.scale(ad.mul(x, x), -1.5)), [x]) < 1e-3

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ad.add(np.ones(2), np.ones(3))


class TestLosses:
    def test_half_with_target_one(self):
        assert ad.bce_terms(np.array([0.5]), 1.0).value[0] == pytest.approx(math.log(2), abs=1e-6)

    def test_saturated_near_zero(self):
        p = np.array([1 - ad.EPS_LOG])
        assert ad.bce_terms(p, 1.0).value[0] == pytest.approx(0.0, abs=1e-6)

    def test_clamped_values_finite(self):
        out = ad.bce_terms(np.array([0.0, 1.0], np.float32), 1.0).value
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(-math.log(ad.EPS_LOG) / 2, rel=1e-5)

    @pytest.mark.parametrize("target", [0.0, 1.0])
    def test_gradcheck(self, target, rng):
        p = rng.uniform(0.05, 0.95, size=16)
        assert ad.gradcheck(lambda p: ad.bce_terms(p, target), [p], h=1e-5) < 1e-3

    def test_mse_gradcheck(self, rng):
        t = rng.normal(size=(3, 5))
        assert ad.gradcheck(lambda p: ad.mse(p, t), [rng.normal(size=(3, 5))]) < 1e-3


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = ad.parameter(np.array([1.0, -2.0], np.float32))
        opt = ad.Adam([p], lr=0.1)
        opt.step([np.zeros(2, np.float32)])
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        p = ad.parameter(np.zeros(3, np.float32))
        opt = ad.Adam([p], lr=0.01)
        ad.adam_step([p], [np.array([2.0, -0.5, 7.0], np.float32)], opt)
        np.testing.assert_allclose(p.value, [-0.01, 0.01, -0.01], rtol=1e-5)

    def test_quadratic_decreases_monotonically(self):
        w = ad.parameter(np.array([1.0]))
        opt = ad.Adam([w], lr=0.1)
        f = [w.value[0] ** 2]
        for _ in range(10):
            w.zero_grad()
            ad.backward(ad.mul(w, w))
            opt.step()
            f.append(w.value[0] ** 2)
        assert all(b < a for a, b in zip(f, f[1:]))

    def test_matches_reference_update(self):
        # hand-rolled float64 simulation of two steps
        g1, g2 = 0.3, -0.1
        b1, b2, eps, lr = 0.5, 0.999, 1e-8, 0.05
        m = (1 - b1) * g1
        v = (1 - b2) * g1 ** 2
        w = 1.0 - lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2 ** 2
        w = w - lr * (m / (1 - b1 ** 2)) / (math.sqrt(v / (1 - b2 ** 2)) + eps)
        p = ad.parameter(np.array([1.0]))
        opt = ad.Adam([p], lr=lr)
        opt.step([np.array([g1])])
        opt.step([np.array([g2])])
        assert p.value[0] == pytest.approx(w, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        p = ad.parameter(np.zeros(3))
        with pytest.raises(ValueError, match="shape"):
            ad.Adam([p], lr=0.1).step([np.zeros(2)])

    def test_defaults(self):
        opt = ad.Adam([], lr=1.0)
        assert (opt.beta1, opt.beta2, opt.eps) == (0.5, 0.999, 1e-8)


class TestCheckpoint:
    def test_roundtrip(self, rng, tmp_path):
        tensors = {"gen/fc/W": rng.normal(size=(3, 4)).astype(np.float32), "s": np.array([7.0], np.float32)}
        ad.save_checkpoint(tmp_path / "a.prg", tensors)
        back = ad.load_checkpoint(tmp_path / "a.prg")
        assert list(back) == list(tensors)
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])

    def test_layout(self):
        blob = ad.encode_checkpoint({"ab": np.array([[1.0, 2.0]], np.float32)})
        expected = (MAGIC + (1).to_bytes(4, "little") + (2).to_bytes(2, "little") + b"ab" + bytes([2])
                    + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                    + np.array([1.0, 2.0], "<f4").tobytes())
        assert blob == expected

    def test_bad_magic_names_offset(self):
        with pytest.raises(ad.CheckpointError, match="offset 0"):
            ad.decode_checkpoint(b"NOTACKPT" + bytes(4))

    @given(cut=st.integers(0, 40))
    def test_truncation_rejected(self, cut):
        blob = ad.encode_checkpoint({"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
        if cut >= len(blob):
            return
        with pytest.raises(ad.CheckpointError, match="offset"):
            ad.decode_checkpoint(blob[:cut])
