import numpy as np
import pytest

from helpers import gradcheck

from ldon import autodiff as ad
from ldon.autodiff import NumericError, Tape, Tensor, forward_op
from ldon.nn import Adam, ChannelNorm, Chain, Conv2D, Dense, Flatten, Parameter, mse_loss
from ldon.rng import Rng


def make_param(rng, shape, name="p", scale=1.0):
    return Parameter(scale * rng.normal(shape), name)


class TestTensor:
    def test_rank_cap(self):
        with pytest.raises(ValueError, match="rank"):
            Tensor(np.zeros((2, 2, 2, 2, 2)))

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            Tensor([1.0, np.nan])
        with pytest.raises(NumericError):
            Tensor([np.inf])

    def test_float64(self):
        t = Tensor(np.ones(3, dtype=np.float32))
        assert t.data.dtype == np.float64


class TestForwardValues:
    def test_mean_of_product(self):
        w = Tensor([2.0])
        x = Tensor([3.0])
        loss = ad.reduce_mean(ad.mul(w, x))
        assert loss.item() == 6.0

    def test_matmul_value(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        out = ad.matmul(a, b)
        assert np.array_equal(out.data, [[17.0], [39.0]])

    def test_relu_sigmoid_sine_values(self):
        x = Tensor([-1.0, 0.0, 2.0])
        assert np.array_equal(ad.relu(x).data, [0.0, 0.0, 2.0])
        assert np.allclose(ad.sigmoid(Tensor([0.0])).data, [0.5])
        assert np.allclose(ad.sine(Tensor([np.pi / 2])).data, [1.0])

    def test_sigmoid_saturation_is_finite(self):
        out = ad.sigmoid(Tensor([-800.0, 800.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == 0.0 and out.data[1] == 1.0

    def test_conv2d_identity_kernel(self):
        rng = Rng(0)
        x = Tensor(rng.normal((2, 1, 5, 5)))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = ad.conv2d(x, Tensor(k))
        assert np.allclose(out.data, x.data)

    def test_determinism(self):
        def run():
            rng = Rng(123)
            x = Tensor(rng.normal((4, 6)))
            w = Tensor(rng.normal((6, 3)))
            return ad.sigmoid(ad.matmul(x, w)).data

        a, b = run(), run()
        assert np.array_equal(a, b)


class TestShapeErrors:
    def test_add_mismatch_names_kind_and_shapes(self):
        with pytest.raises(ValueError) as err:
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        msg = str(err.value)
        assert "add" in msg and "(2, 3)" in msg and "(4, 5)" in msg

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ValueError) as err:
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        assert "matmul" in str(err.value)

    def test_conv2d_channel_mismatch(self):
        with pytest.raises(ValueError, match="channel"):
            ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 5, 3, 3))))

    def test_conv2d_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            ad.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))

    def test_reshape_size_mismatch(self):
        with pytest.raises(ValueError, match="reshape"):
            ad.reshape(Tensor(np.zeros((2, 3))), (7,))


class TestForwardOpDispatch:
    def test_dispatch_matches_direct(self):
        x = Tensor([[1.0, -2.0]])
        assert np.array_equal(forward_op("relu", [x]).data, ad.relu(x).data)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown op kind"):
            forward_op("gelu", [Tensor([1.0])])

    def test_non_finite_input_rejected(self):
        bad = Tensor([1.0])
        bad.data = np.array([np.nan])
        with pytest.raises(NumericError, match="relu"):
            forward_op("relu", [bad])


class TestBackward:
    def test_mean_product_grads(self):
        tape = Tape()
        w = tape.watch(Tensor([2.0]))
        x = tape.watch(Tensor([3.0]))
        loss = ad.reduce_mean(ad.mul(w, x))
        grads = tape.backward(loss)
        assert np.allclose(grads[w.node.nid].data, [3.0])
        assert np.allclose(grads[x.node.nid].data, [2.0])

    def test_unreached_node_gets_zero(self):
        tape = Tape()
        w = tape.watch(Tensor([2.0]))
        dead = tape.watch(Tensor([5.0]))
        loss = ad.reduce_mean(ad.mul(w, w))
        grads = tape.backward(loss)
        assert np.array_equal(grads[dead.node.nid].data, [0.0])

    def test_constant_branch_gets_no_gradient(self):
        tape = Tape()
        w = tape.watch(Tensor([2.0]))
        c = Tensor([7.0])
        loss = ad.reduce_mean(ad.mul(w, c))
        grads = tape.backward(loss)
        assert c.node is None
        assert np.allclose(grads[w.node.nid].data, [7.0])

    def test_backward_twice_rejected(self):
        tape = Tape()
        w = tape.watch(Tensor([2.0]))
        loss = ad.reduce_mean(ad.mul(w, w))
        tape.backward(loss)
        with pytest.raises(RuntimeError, match="consumed"):
            tape.backward(loss)

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        w = tape.watch(Tensor([1.0, 2.0]))
        y = ad.mul(w, w)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)

    def test_loss_off_tape_rejected(self):
        tape = Tape()
        tape.watch(Tensor([1.0]))
        with pytest.raises(ValueError, match="not recorded"):
            tape.backward(Tensor(0.0))

    def test_mixed_tapes_rejected(self):
        t1, t2 = Tape(), Tape()
        a = t1.watch(Tensor([1.0]))
        b = t2.watch(Tensor([2.0]))
        with pytest.raises(ValueError, match="different tapes"):
            ad.add(a, b)

    def test_relu_gradient_at_zero_is_zero(self):
        tape = Tape()
        x = tape.watch(Tensor([0.0]))
        grads = tape.backward(ad.reduce_mean(ad.relu(x)))
        assert grads[x.node.nid].data[0] == 0.0

    def test_sigmoid_gradient_at_zero(self):
        tape = Tape()
        x = tape.watch(Tensor([0.0]))
        grads = tape.backward(ad.reduce_mean(ad.sigmoid(x)))
        assert np.allclose(grads[x.node.nid].data, [0.25])

    def test_reuse_of_watched_tensor_accumulates(self):
        # loss = mean(w*w + w) -> dloss/dw = 2w + 1
        tape = Tape()
        w = tape.watch(Tensor([3.0]))
        loss = ad.reduce_mean(ad.add(ad.mul(w, w), w))
        grads = tape.backward(loss)
        assert np.allclose(grads[w.node.nid].data, [7.0])


class TestGradcheckPerOp:
    """Central finite differences, h=1e-5, rel err < 1e-4."""

    def setup_method(self):
        self.rng = Rng(42)

    def run_check(self, loss_fn, params, tol=1e-4):
        assert gradcheck(loss_fn, params) < tol

    def test_add_broadcast(self):
        a = make_param(self.rng, (3, 4), "a")
        b = make_param(self.rng, (4,), "b")
        r = self.rng.normal((3, 4))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.add(a, b), r)), [a, b])

    def test_sub_broadcast(self):
        a = make_param(self.rng, (2, 1, 4), "a")
        b = make_param(self.rng, (3, 1), "b")
        r = self.rng.normal((2, 3, 4))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.sub(a, b), r)), [a, b])

    def test_mul_broadcast(self):
        a = make_param(self.rng, (5,), "a")
        b = make_param(self.rng, (2, 5), "b")
        r = self.rng.normal((2, 5))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.mul(a, b), r)), [a, b])

    def test_matmul_rank2(self):
        a = make_param(self.rng, (3, 4), "a")
        b = make_param(self.rng, (4, 2), "b")
        r = self.rng.normal((3, 2))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.matmul(a, b), r)), [a, b])

    def test_matmul_batched(self):
        a = make_param(self.rng, (2, 3, 4), "a")
        b = make_param(self.rng, (4, 5), "b")
        r = self.rng.normal((2, 3, 5))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.matmul(a, b), r)), [a, b])

    def test_conv2d(self):
        x = make_param(self.rng, (2, 2, 4, 4), "x")
        k = make_param(self.rng, (3, 2, 3, 3), "k")
        r = self.rng.normal((2, 3, 4, 4))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.conv2d(x, k), r)), [x, k])

    def test_reshape_transpose(self):
        x = make_param(self.rng, (2, 6), "x")
        r = self.rng.normal((3, 4))
        self.run_check(
            lambda: ad.reduce_mean(ad.mul(ad.transpose(ad.reshape(x, (4, 3))), r)), [x]
        )

    def test_reduce_mean_axis(self):
        x = make_param(self.rng, (3, 4, 5), "x")
        r = self.rng.normal((4,))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.reduce_mean(x, axis=(0, 2)), r)), [x])

    def test_relu_away_from_kink(self):
        x = Parameter(self.rng.normal((4, 4)) + np.sign(self.rng.normal((4, 4))) * 0.5, "x")
        r = self.rng.normal((4, 4))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.relu(x), r)), [x])

    def test_sigmoid(self):
        x = make_param(self.rng, (3, 3), "x")
        r = self.rng.normal((3, 3))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.sigmoid(x), r)), [x])

    def test_sine(self):
        x = make_param(self.rng, (6,), "x")
        r = self.rng.normal((6,))
        self.run_check(lambda: ad.reduce_mean(ad.mul(ad.sine(x), r)), [x])


class TestGradcheckLayers:
    def test_dense_chain(self):
        rng = Rng(7)
        net = Chain(
            [
                Dense(5, 8, "sine", rng=rng, name="l0"),
                Dense(8, 6, "relu", rng=rng, name="l1"),
                Dense(6, 2, "sigmoid", rng=rng, name="l2"),
            ]
        )
        x = rng.normal((3, 5))
        y = rng.normal((3, 2))
        err = gradcheck(lambda: mse_loss(net(Tensor(x)), y), net.parameters())
        assert err < 1e-4

    def test_conv_chain_with_norm_in_eval_mode(self):
        # Norm statistics are constants, so finite differences only agree
        # when the buffers are frozen (eval mode).
        rng = Rng(9)
        net = Chain(
            [
                Conv2D(1, 4, 3, "sine", rng=rng, name="c0"),
                ChannelNorm(4),
                Conv2D(4, 3, 3, "relu", rng=rng, name="c1"),
                Flatten(),
                Dense(3 * 16, 2, rng=rng, name="head"),
            ]
        )
        x = rng.normal((2, 1, 4, 4))
        net(Tensor(x))  # one training-mode pass to populate running stats
        net.train(False)
        y = rng.normal((2, 2))
        err = gradcheck(lambda: mse_loss(net(Tensor(x)), y), net.parameters())
        assert err < 1e-4


class TestChannelNorm:
    def test_eval_uses_running_stats(self):
        rng = Rng(3)
        norm = ChannelNorm(2)
        x = Tensor(rng.normal((8, 2, 3, 3)) * 2.0 + 1.0)
        norm(x)
        norm.training = False
        y1 = norm(x).data
        y2 = norm(x).data
        assert np.array_equal(y1, y2)

    def test_training_updates_buffers(self):
        rng = Rng(4)
        norm = ChannelNorm(2, momentum=0.9)
        x = Tensor(rng.normal((16, 2, 4, 4)) + 5.0)
        before = norm.running_mean.copy()
        norm(x)
        assert not np.array_equal(before, norm.running_mean)
        expected = 0.9 * before + 0.1 * x.data.mean(axis=(0, 2, 3))
        assert np.allclose(norm.running_mean, expected)


class TestAdam:
    def test_first_step_moves_by_lr_times_sign(self):
        for g0 in (0.7, -0.5, 4e3):
            p = Parameter(np.array([1.0]), "w")
            opt = Adam([p], lr=1e-3)
            tape = Tape()
            tape.watch(p)
            loss = ad.reduce_mean(ad.mul(p, float(g0)))
            grads = tape.backward(loss)
            before = 1.0
            opt.step(grads)
            delta = p.data[0] - before
            assert abs(delta + 1e-3 * np.sign(g0)) < 1e-6

    def test_zero_gradient_leaves_params_unchanged(self):
        p = Parameter(np.array([2.0, -3.0]), "w")
        dead = Parameter(np.array([1.0]), "unused")
        opt = Adam([p, dead], lr=0.1)
        tape = Tape()
        tape.watch(p)
        tape.watch(dead)
        loss = ad.reduce_mean(ad.mul(p, np.zeros(2)))
        opt.step(tape.backward(loss))
        assert np.array_equal(p.data, [2.0, -3.0])
        assert np.array_equal(dead.data, [1.0])

    def test_missing_gradient_names_parameter(self):
        p = Parameter(np.array([1.0]), "branch.weight")
        opt = Adam([p])
        with pytest.raises(ValueError, match="branch.weight"):
            opt.step({})

    def test_convergence_on_quadratic(self):
        rng = Rng(11)
        target = rng.normal(4)
        p = Parameter(np.zeros(4), "w")
        opt = Adam([p], lr=0.05)
        for _ in range(400):
            tape = Tape()
            tape.watch(p)
            loss = mse_loss(p, target)
            opt.step(tape.backward(loss))
        assert np.allclose(p.data, target, atol=1e-3)

    def test_glorot_bounds(self):
        from ldon.nn import glorot_uniform

        w = glorot_uniform(Rng(0), (200, 300), 200, 300)
        limit = np.sqrt(6.0 / 500.0)
        assert np.all(np.abs(w) <= limit)
        assert np.abs(w).max() > 0.8 * limit


class TestSpectralMask:
    def test_full_retention_at_half_size(self):
        mask = ad.spectral_mask(8, 4)
        assert mask.all()

    def test_small_ball_indices(self):
        mask = ad.spectral_mask(8, 1)
        kept = {0, 1, 7}
        for i in range(8):
            for j in range(8):
                assert mask[i, j] == ((i in kept) and (j in kept))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="k_max=5"):
            ad.spectral_mask(8, 5)
        with pytest.raises(ValueError, match="k_max=-1"):
            ad.spectral_mask(8, -1)


class TestSpectralConv2d:
    def _weights(self, c_in, c_out, n_modes, rng):
        return rng.normal((c_in, c_out, n_modes)), rng.normal((c_in, c_out, n_modes))

    def test_unit_weights_full_modes_is_identity(self):
        rng = Rng(0)
        x = Tensor(rng.normal((2, 1, 8, 8)))
        n_modes = int(ad.spectral_mask(8, 4).sum())
        re = Tensor(np.ones((1, 1, n_modes)))
        im = Tensor(np.zeros((1, 1, n_modes)))
        y = ad.spectral_conv2d(x, re, im, k_max=4)
        np.testing.assert_allclose(y.data, x.data, atol=1e-12)

    def test_unit_weights_truncation_is_low_pass(self):
        rng = Rng(1)
        x = rng.normal((1, 1, 8, 8))
        k_max = 2
        mask = ad.spectral_mask(8, k_max)
        n_modes = int(mask.sum())
        y = ad.spectral_conv2d(
            Tensor(x), Tensor(np.ones((1, 1, n_modes))), Tensor(np.zeros((1, 1, n_modes))), k_max=k_max
        )
        want = np.real(np.fft.ifft2(np.fft.fft2(x[0, 0]) * mask))
        np.testing.assert_allclose(y.data[0, 0], want, atol=1e-12)

    def test_single_mode_pass_and_block(self):
        n = np.arange(8)
        wave = np.cos(2 * np.pi * 2 * n[None, :] / 8) * np.ones((8, 1))
        x = Tensor(wave[None, None])
        for k_max, keeps in [(2, True), (1, False)]:
            n_modes = int(ad.spectral_mask(8, k_max).sum())
            y = ad.spectral_conv2d(
                x, Tensor(np.ones((1, 1, n_modes))), Tensor(np.zeros((1, 1, n_modes))), k_max=k_max
            )
            if keeps:
                np.testing.assert_allclose(y.data[0, 0], wave, atol=1e-12)
            else:
                np.testing.assert_allclose(y.data[0, 0], 0.0, atol=1e-12)

    def test_commutes_with_circular_shift(self):
        rng = Rng(2)
        x = rng.normal((1, 2, 8, 8))
        re, im = self._weights(2, 3, int(ad.spectral_mask(8, 2).sum()), rng)
        base = ad.spectral_conv2d(Tensor(x), Tensor(re), Tensor(im), k_max=2).data
        rolled = np.roll(x, (3, 5), axis=(2, 3))
        got = ad.spectral_conv2d(Tensor(rolled), Tensor(re), Tensor(im), k_max=2).data
        np.testing.assert_allclose(got, np.roll(base, (3, 5), axis=(2, 3)), atol=1e-10)

    def test_gradcheck_all_inputs(self):
        rng = Rng(3)
        n_modes = int(ad.spectral_mask(4, 1).sum())
        x = Parameter(rng.normal((2, 2, 4, 4)), name="x")
        re = Parameter(0.3 * rng.normal((2, 3, n_modes)), name="re")
        im = Parameter(0.3 * rng.normal((2, 3, n_modes)), name="im")

        def loss():
            return ad.reduce_mean(ad.mul(ad.spectral_conv2d(x, re, im, k_max=1),
                                         ad.spectral_conv2d(x, re, im, k_max=1)))

        assert gradcheck(loss, [x, re, im]) < 1e-4

    def test_dispatch_parity(self):
        rng = Rng(4)
        n_modes = int(ad.spectral_mask(4, 1).sum())
        x = rng.normal((1, 1, 4, 4))
        re, im = self._weights(1, 1, n_modes, rng)
        direct = ad.spectral_conv2d(Tensor(x), Tensor(re), Tensor(im), k_max=1)
        routed = forward_op("spectral_conv2d", [x, re, im], k_max=1)
        np.testing.assert_array_equal(direct.data, routed.data)

    def test_shape_validation(self):
        rng = Rng(5)
        n_modes = int(ad.spectral_mask(4, 1).sum())
        re, im = self._weights(2, 2, n_modes, rng)
        with pytest.raises(ValueError, match="square"):
            ad.spectral_conv2d(Tensor(rng.normal((1, 2, 4, 8))), Tensor(re), Tensor(im), k_max=1)
        with pytest.raises(ValueError, match="channels"):
            ad.spectral_conv2d(Tensor(rng.normal((1, 3, 4, 4))), Tensor(re), Tensor(im), k_max=1)
        with pytest.raises(ValueError, match="retains"):
            ad.spectral_conv2d(Tensor(rng.normal((1, 2, 4, 4))), Tensor(re), Tensor(im), k_max=2)
        with pytest.raises(ValueError, match="imaginary"):
            ad.spectral_conv2d(Tensor(rng.normal((1, 2, 4, 4))), Tensor(re),
                               Tensor(im[:, :, :-1]), k_max=1)
