import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import checks
from binscene.errors import ConfigurationError, InvalidInputError
from binscene.numerics import functional as F
from binscene.numerics import (GRU, Adam, AdamState, BatchNorm, Conv2d, Tensor, backward,
                               no_grad, precision, relu, sigmoid, softmax)
from binscene.numerics.optim import FULL_SCALE_BATCH_SIZE, FULL_SCALE_EPOCHS, FULL_SCALE_LEARNING_RATE


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True, dtype=np.float64)


@pytest.mark.parametrize("seed", range(3))
def test_layer_gradients(seed):
    errs = checks.layer_gradchecks(seed)
    bad = {k: v for k, v in errs.items() if not v < 1e-3}
    assert not bad


def test_adjoint():
    assert checks.adjoint_errors(trials=50) < 1e-9


def test_backends_agree():
    assert checks.backends_agree()


class TestConv:
    def test_ones(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 2, 2)))
        assert F.conv2d(x, w).data.tolist() == [[[[4, 4], [4, 4]]]]

    def test_identity(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 1, 5, 4)))
        assert np.array_equal(F.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1))).data, x.data)

    def test_encoder_chain(self):
        x = Tensor(np.zeros((1, 1, 257, 97)))
        w = Tensor(np.zeros((1, 1, 4, 4)))
        for _ in range(4):
            x = F.conv2d(x, w, stride=2, padding=1)
        assert x.shape[-2:] == (16, 6)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigurationError):
            F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 2, 2))))

    def test_too_small(self):
        with pytest.raises(ConfigurationError):
            F.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    def test_transpose_ones(self):
        v = 2.5
        out = F.conv_transpose2d(Tensor(np.full((1, 1, 1, 1), v)), Tensor(np.ones((1, 1, 2, 2))), stride=2)
        assert out.data.tolist() == [[[[v, v], [v, v]]]]

    def test_decoder_chain(self):
        x = Tensor(np.zeros((1, 1, 16, 6)))
        w = Tensor(np.zeros((1, 1, 4, 4)))
        for _ in range(5):
            x = F.conv_transpose2d(x, w, stride=2, padding=1)
        assert x.shape[-2:] == (512, 192)


class TestBatchNorm:
    def test_standardized_input_passes(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((64, 2, 3, 3))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        with precision("wide"):
            bn = BatchNorm(2)
            out = bn(Tensor(x))
        assert np.allclose(out.data, x, atol=1e-5)

    def test_zero_gamma(self):
        with precision("wide"):
            bn = BatchNorm(3)
            bn.gamma.data[:] = 0
            bn.beta.data[:] = [1, 2, 3]
            out = bn(Tensor(np.random.default_rng(1).standard_normal((4, 3, 2, 2))))
        assert np.array_equal(out.data, np.broadcast_to(np.array([1, 2, 3.0]).reshape(1, 3, 1, 1), out.shape))

    def test_empty_batch(self):
        with pytest.raises(InvalidInputError):
            BatchNorm(2)(Tensor(np.zeros((0, 2, 3, 3))))

    def test_running_stats_move_in_training_only(self):
        bn = BatchNorm(1)
        x = Tensor(np.full((2, 1, 2, 2), 5.0))
        bn.eval()
        bn(x)
        assert bn.running_mean[0] == 0
        bn.train()
        bn(x)
        assert bn.running_mean[0] == pytest.approx(0.5)


class TestActivations:
    def test_examples(self):
        assert relu(Tensor([-1.0, 2.0])).data.tolist() == [0, 2]
        assert float(sigmoid(Tensor(0.0)).data) == 0.5
        assert softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]

    @settings(max_examples=50)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                      elements=st.floats(-700, 700)))
    def test_softmax_rows(self, a):
        with precision("wide"):
            s = softmax(Tensor(a), axis=-1).data
        assert np.all(np.abs(s.sum(axis=-1) - 1) < 1e-9)
        assert np.all((s >= 0) & (s <= 1))

    def test_softmax_extreme(self):
        s = softmax(Tensor([1000.0, 0.0]), axis=0).data
        assert np.isfinite(s).all() and s[0] == 1.0

    def test_sigmoid_saturates_cleanly(self):
        assert sigmoid(Tensor([-800.0, 800.0], dtype=np.float64)).data.tolist() == [0.0, 1.0]


class TestGru:
    def test_zero_fixed_point(self):
        with precision("wide"):
            gru = GRU(3, 4)
            for b in (gru.b_ih, gru.b_hh):
                b.data[:] = 0
            out, h = gru(Tensor(np.zeros((5, 2, 3))))
        assert not out.data.any() and not h.data.any()

    def test_single_step_equals_cell(self):
        with precision("wide"):
            gru = GRU(3, 4, rng=np.random.default_rng(2))
            x = Tensor(np.random.default_rng(3).standard_normal((1, 2, 3)))
            h0 = Tensor(np.random.default_rng(4).standard_normal((2, 4)))
            _, h = gru(x, h0)
            cell = gru.cell(F.linear(x[0], gru.w_ih, gru.b_ih), h0)
        assert np.array_equal(h.data, cell.data)

    def test_matches_reference_recurrence(self):
        rng = np.random.default_rng(5)
        with precision("wide"):
            gru = GRU(2, 3, rng=rng)
            seq = rng.standard_normal((4, 1, 2))
            out, _ = gru(Tensor(seq))
        sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
        wi, wh, bi, bh = (p.data for p in (gru.w_ih, gru.w_hh, gru.b_ih, gru.b_hh))
        h = np.zeros(3)
        for t in range(4):
            gi, gh = wi @ seq[t, 0] + bi, wh @ h + bh
            r, z = sig(gi[:3] + gh[:3]), sig(gi[3:6] + gh[3:6])
            n = np.tanh(gi[6:] + r * gh[6:])
            h = (1 - z) * n + z * h
            assert np.allclose(out.data[t, 0], h, atol=1e-12)

    def test_bad_shape(self):
        with pytest.raises(ConfigurationError):
            GRU(3, 4)(Tensor(np.zeros((2, 1, 5))))


class TestBackward:
    def test_sum(self):
        x = leaf([1.0, 2.0, 3.0])
        backward(x.sum())
        assert x.grad.tolist() == [1, 1, 1]

    def test_square(self):
        x = leaf([1.0, 2.0])
        backward((x * x).sum())
        assert x.grad.tolist() == [2, 4]

    def test_non_scalar(self):
        with pytest.raises(InvalidInputError):
            backward(leaf([1.0, 2.0]) * 2)

    def test_unused_param_gets_zero(self):
        x, y = leaf([1.0]), leaf([2.0, 3.0])
        backward((x * 3).sum(), [x, y])
        assert y.grad.tolist() == [0, 0] and x.grad.tolist() == [3]

    def test_shared_node_accumulates(self):
        x = leaf([2.0])
        y = x * x
        backward((y + y).sum())
        assert x.grad.tolist() == [8]

    def test_no_grad(self):
        x = leaf([1.0])
        with no_grad():
            y = x * 2
        assert not y.requires_grad


class TestAdam:
    def test_full_scale_reference(self):
        assert FULL_SCALE_LEARNING_RATE == 1e-5 and FULL_SCALE_BATCH_SIZE == 2 and FULL_SCALE_EPOCHS == 20
        assert AdamState().lr == 1e-5

    def test_zero_gradient(self):
        p = leaf([1.5, -2.0])
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        assert p.data.tolist() == [1.5, -2.0] and opt.state.step == 1

    @settings(max_examples=40)
    @given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3), st.floats(1e-6, 1e-1))
    def test_first_step_closed_form(self, g, lr):
        p = leaf([0.0])
        opt = Adam([p], lr=lr)
        p.grad = np.array([g])
        opt.step()
        # bias-corrected m/sqrt(v) is g/|g| at t=1; eps only enters the denominator
        assert p.data[0] == pytest.approx(-lr * g / (abs(g) + 1e-8), rel=1e-12)
        assert p.data[0] == pytest.approx(-lr * np.sign(g), rel=1e-5)

    def test_constant_gradient_steps(self):
        p = leaf([0.0])
        opt = Adam([p], lr=0.01)
        for _ in range(5):
            p.grad = np.array([3.0])
            opt.step()
        assert p.data[0] == pytest.approx(-0.05, rel=1e-6)

    @pytest.mark.parametrize("kw", [dict(lr=0), dict(beta1=1.0), dict(beta2=-0.1)])
    def test_bad_state(self, kw):
        with pytest.raises(ConfigurationError):
            AdamState(**kw)


def test_conv_module_determinism():
    a = Conv2d(2, 3, 3, rng=np.random.default_rng(7))
    b = Conv2d(2, 3, 3, rng=np.random.default_rng(7))
    assert np.array_equal(a.weight.data, b.weight.data)


def test_precision_modes():
    with precision("wide"):
        assert Tensor(1.0).dtype == np.float64
    assert Tensor(1.0).dtype == np.float32
    with pytest.raises(ConfigurationError):
        with precision("half"):
            pass
