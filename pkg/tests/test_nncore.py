import numpy as np
import pytest

from gztech.errors import ShapeError, ValidationError
from gztech.nncore import (
    Adam,
    Conv2d,
    Deconv2d,
    Dropout,
    FlattenFreq,
    Linear,
    MaxPoolFreq,
    ReLU,
    Sequential,
    Sigmoid,
    SoftmaxClasses,
    Tensor,
    adam_step,
    forward_backward,
    layer_from_spec,
    load_checkpoint,
    save_checkpoint,
)


def naive_strided_conv(u, w):
    """Loop reference: stride (2,1), zero pad (1,1): [B,Ci,2F,T] -> [B,Co,F,T]."""
    b, ci, f2, t = u.shape
    co = w.shape[0]
    f = f2 // 2
    up = np.pad(u, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.zeros((b, co, f, t))
    for bi in range(b):
        for o in range(co):
            for fo in range(f):
                for to in range(t):
                    y[bi, o, fo, to] = np.sum(w[o] * up[bi, :, 2 * fo : 2 * fo + 3,
                                                        to : to + 3])
    return y


class TestConv2d:
    def test_one_by_one_identity(self):
        layer = Conv2d(1, 1, (1, 1), dtype=np.float64)
        layer.w.data[:] = 1.0
        layer.b.data[:] = 0.0
        x = np.random.default_rng(0).standard_normal((2, 1, 5, 7))
        assert np.array_equal(layer.forward(x), x)

    def test_all_ones_kernel_sums_interior_to_nine(self):
        layer = Conv2d(1, 1, (3, 3), dtype=np.float64)
        layer.w.data[:] = 1.0
        layer.b.data[:] = 0.0
        y = layer.forward(np.ones((1, 1, 6, 6)))
        assert np.all(y[0, 0, 1:-1, 1:-1] == 9.0)
        assert y[0, 0, 0, 0] == 4.0  # corner sees a 2x2 patch under zero padding

    def test_linearity(self):
        rng = np.random.default_rng(1)
        layer = Conv2d(2, 3, (3, 3), rng=rng, dtype=np.float64)
        layer.b.data[:] = 0.0
        x = rng.standard_normal((1, 2, 4, 5))
        np.testing.assert_allclose(layer.forward(3.5 * x), 3.5 * layer.forward(x),
                                   rtol=1e-12)

    def test_channel_mismatch_raises(self):
        layer = Conv2d(3, 4)
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((1, 2, 8, 8), dtype=np.float32))

    def test_even_kernel_rejected(self):
        with pytest.raises(ValidationError):
            Conv2d(1, 1, (2, 3))


class TestMaxPoolFreq:
    def test_halves_frequency_only(self):
        x = np.random.default_rng(2).standard_normal((2, 3, 128, 17))
        y = MaxPoolFreq().forward(x)
        assert y.shape == (2, 3, 64, 17)

    def test_five_applications_reach_four(self):
        x = np.random.default_rng(3).standard_normal((1, 1, 128, 5))
        for _ in range(5):
            x = MaxPoolFreq().forward(x)
        assert x.shape[2] == 4

    def test_constant_input_constant_output(self):
        y = MaxPoolFreq().forward(np.full((1, 1, 8, 4), 2.5))
        assert np.all(y == 2.5)

    def test_odd_frequency_floors(self):
        x = np.arange(7, dtype=np.float64).reshape(1, 1, 7, 1)
        y = MaxPoolFreq().forward(x)
        assert y[..., 0].ravel().tolist() == [1.0, 3.0, 5.0]

    def test_too_short_rejected(self):
        with pytest.raises(ShapeError):
            MaxPoolFreq().forward(np.zeros((1, 1, 1, 4)))


class TestDeconv2d:
    def test_doubles_frequency(self):
        layer = Deconv2d(3, 2, (3, 3), dtype=np.float64)
        y = layer.forward(np.random.default_rng(4).standard_normal((2, 3, 4, 9)))
        assert y.shape == (2, 2, 8, 9)

    def test_zero_input_broadcasts_bias(self):
        layer = Deconv2d(2, 3, (3, 3), dtype=np.float64)
        layer.b.data[:] = np.array([1.0, -2.0, 0.5])
        y = layer.forward(np.zeros((1, 2, 4, 6)))
        assert np.allclose(y, layer.b.data[None, :, None, None])

    def test_adjoint_of_strided_conv(self):
        rng = np.random.default_rng(5)
        for _ in range(6):
            ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            f, t = int(rng.integers(2, 6)), int(rng.integers(1, 6))
            layer = Deconv2d(ci, co, (3, 3), rng=rng, dtype=np.float64)
            layer.b.data[:] = 0.0
            x = rng.standard_normal((2, ci, f, t))
            u = rng.standard_normal((2, co, 2 * f, t))
            lhs = np.sum(naive_strided_conv(u, layer.w.data) * x)
            rhs = np.sum(u * layer.forward(x))
            assert abs(lhs - rhs) < 1e-10


class TestForwardBackward:
    def test_zero_weight_chain_hits_analytic_bce(self):
        # zero weights -> sigmoid(0) = 0.5 -> BCE(y=0, 0.5) = ln 2
        chain = Sequential([Linear(4, 1, dtype=np.float64), Sigmoid()])
        chain.layers[0].w.data[:] = 0.0

        def bce(pred, labels):
            p = np.clip(pred, 1e-12, 1 - 1e-12)
            loss = -np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p))
            grad = (-(labels / p) + (1 - labels) / (1 - p)) / p.size
            return loss, grad

        x = np.random.default_rng(6).standard_normal((2, 4, 5))
        labels = np.zeros((2, 1, 5))
        loss, grads = forward_backward(chain, x, bce, labels)
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)
        assert len(grads) == len(chain.params())
        assert all(g is not None for g in grads)

    def test_eval_dropout_is_deterministic(self):
        chain = Sequential([Dropout(0.5, rng=np.random.default_rng(7))])
        x = np.random.default_rng(8).standard_normal((2, 3, 4, 5))
        a = chain.forward(x, train=False)
        b = chain.forward(x, train=False)
        assert np.array_equal(a, b) and np.array_equal(a, x)

    def test_shape_failure_reports_layer_index(self):
        chain = Sequential([ReLU(), Conv2d(3, 4), ReLU()])
        with pytest.raises(ShapeError, match="layer 1"):
            chain.forward(np.zeros((1, 2, 4, 4), dtype=np.float32))


class TestDropout:
    def test_train_fraction_and_rescale(self):
        layer = Dropout(0.25, rng=np.random.default_rng(9))
        x = np.ones((64, 4, 16, 16), dtype=np.float32)
        y = layer.forward(x, train=True)
        dropped = float((y == 0).mean())
        assert abs(dropped - 0.25) < 0.02  # binomial tolerance
        survivors = y[y != 0]
        np.testing.assert_allclose(survivors, 1.0 / 0.75, rtol=1e-6)

    def test_invalid_probability(self):
        with pytest.raises(ValidationError):
            Dropout(1.0)


class TestActivations:
    def test_softmax_columns_sum_to_one(self):
        x = np.random.default_rng(10).standard_normal((3, 8, 11)) * 7
        y = SoftmaxClasses().forward(x)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)

    def test_sigmoid_open_interval_and_stability(self):
        x = np.array([-500.0, -5.0, 0.0, 5.0, 500.0])
        y = Sigmoid().forward(x)
        assert np.all(np.isfinite(y))
        assert np.all((y >= 0) & (y <= 1))
        assert y[2] == 0.5

    def test_flatten_round_trip(self):
        x = np.random.default_rng(11).standard_normal((2, 3, 4, 5))
        layer = FlattenFreq()
        y = layer.forward(x)
        assert y.shape == (2, 12, 5)
        assert np.array_equal(layer.backward(y), x)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        p = Tensor(np.ones(4), dtype=np.float64)
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(4)
        opt.step()
        assert np.array_equal(p.data, np.ones(4))

    def test_first_step_closed_form(self):
        # m_hat = g, v_hat = g^2 -> step ~ lr * g / (|g| + eps)
        p = Tensor(np.array([1.0]), dtype=np.float64)
        opt = Adam([p], lr=0.1)
        p.grad = np.array([1.0])
        opt.step()
        assert p.data[0] == pytest.approx(1.0 - 0.1, abs=1e-6)

    def test_two_runs_bit_identical(self):
        def run():
            rng = np.random.default_rng(12)
            p = Tensor(rng.standard_normal(8), dtype=np.float32)
            opt = Adam([p], lr=1e-2)
            for _ in range(20):
                p.grad = rng.standard_normal(8).astype(np.float32)
                opt.step()
            return p.data.copy()

        assert np.array_equal(run(), run())

    def test_non_finite_gradient_rejected(self):
        p = Tensor(np.ones(2), dtype=np.float64)
        opt = Adam([p])
        p.grad = np.array([1.0, np.nan])
        with pytest.raises(FloatingPointError):
            opt.step()

    def test_functional_form_matches_class(self):
        value = np.array([2.0])
        m = np.zeros(1)
        v = np.zeros(1)
        adam_step(value, np.array([0.5]), m, v, 1, 0.1, 0.9, 0.999, 1e-8)
        p = Tensor(np.array([2.0]), dtype=np.float64)
        opt = Adam([p], lr=0.1)
        p.grad = np.array([0.5])
        opt.step()
        assert value[0] == pytest.approx(p.data[0], rel=1e-15)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        params = [Tensor(rng.standard_normal((3, 4)).astype(np.float32), name="w"),
                  Tensor(rng.standard_normal(4).astype(np.float32), name="b")]
        header = {"detector": "test", "seed": 5, "step": 42,
                  "layer_specs": [{"kind": "linear"}]}
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, header, params)
        back_header, values = load_checkpoint(path)
        assert back_header["seed"] == 5 and back_header["step"] == 42
        assert len(values) == 2
        for p, v in zip(params, values):
            assert np.array_equal(p.data, v)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"\x03\x00")
        with pytest.raises(ValidationError):
            load_checkpoint(path)


def test_layer_from_spec_round_trip():
    rng = np.random.default_rng(14)
    layers = [
        Conv2d(2, 3, (3, 3), rng=rng),
        Deconv2d(3, 2, (3, 3), rng=rng),
        MaxPoolFreq(),
        ReLU(),
        Dropout(0.25),
        FlattenFreq(),
        Linear(6, 4, rng=rng),
        Sigmoid(),
        SoftmaxClasses(),
    ]
    for layer in layers:
        rebuilt = layer_from_spec(layer.spec(), rng=np.random.default_rng(0))
        assert rebuilt.kind == layer.kind
        assert rebuilt.spec() == layer.spec()
    seq = Sequential(layers[:3])
    rebuilt = layer_from_spec(seq.spec(), rng=np.random.default_rng(0))
    assert rebuilt.spec() == seq.spec()
    with pytest.raises(ValidationError):
        layer_from_spec({"kind": "avgpool"})
