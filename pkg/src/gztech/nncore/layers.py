"""Layer kinds used by the detectors, with manual forward/backward passes.

Activations flow as [B, C, F, T] arrays (batch, channels, frequency bins,
time frames) except after FlattenFreq, which folds channels x frequency
into one per-frame feature axis [B, D, T].

Convolutions keep both spatial dims via zero 'same' padding; pooling and
transposed convolution act on the frequency axis only, so the time length
is preserved end to end and any T >= 1 is valid.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, ValidationError
from .tensor import Tensor


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """[B,C,F,T] -> [B, C*kh*kw, F*T] patches under zero 'same' padding.

    Built tap by tap with block copies (contiguous along T) so the gather
    stays cache-friendly; the matmul consuming it is then a batched GEMM.
    """
    b, c, f, t = x.shape
    padded = np.zeros((b, c, f + kh - 1, t + kw - 1), dtype=x.dtype)
    padded[:, :, kh // 2 : kh // 2 + f, kw // 2 : kw // 2 + t] = x
    cols = np.empty((b, c, kh, kw, f, t), dtype=x.dtype)
    for dk in range(kh):
        for dl in range(kw):
            cols[:, :, dk, dl] = padded[:, :, dk : dk + f, dl : dl + t]
    return cols.reshape(b, c * kh * kw, f * t)


def _corr_same(x: np.ndarray, weights: np.ndarray, bias,
               cols: np.ndarray | None = None) -> np.ndarray:
    """Zero-same-padded correlation: [B,Cin,F,T] x [Cout,Cin,kh,kw] -> [B,Cout,F,T]."""
    b, c, f, t = x.shape
    co, ci, kh, kw = weights.shape
    if ci != c:
        raise ShapeError(f"channel mismatch: input has {c}, kernel expects {ci}")
    if cols is None:
        cols = _im2col(x, kh, kw)
    y = np.matmul(weights.reshape(co, -1), cols)  # [B, Cout, F*T]
    if bias is not None:
        y += bias[:, None]
    return y.reshape(b, co, f, t)


def _corr_grad_weights(cols: np.ndarray, dy: np.ndarray, c: int,
                       kh: int, kw: int) -> np.ndarray:
    """Gradient of _corr_same w.r.t. weights, from the forward's cols."""
    b, co = dy.shape[:2]
    dy2 = dy.reshape(b, co, -1)
    dw = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(co, c, kh, kw)


def _corr_grad_input(dy: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient of _corr_same w.r.t. input: correlate dy with the flipped kernel."""
    flipped = np.ascontiguousarray(weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return _corr_same(dy, flipped, None)


class Layer:
    """Base: forward caches, backward consumes the cache once."""

    kind = "layer"

    def params(self) -> list[Tensor]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()


class Conv2d(Layer):
    """2D correlation with zero 'same' padding; kernel dims must be odd."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel=(3, 3),
                 rng: np.random.Generator | None = None, dtype=np.float32):
        kh, kw = kernel
        if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ValidationError(f"kernel dims must be odd and positive, got {kernel}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kh, kw)
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kh * kw
        self.w = Tensor(kaiming_uniform((out_channels, in_channels, kh, kw), fan_in, rng, dtype),
                        dtype=dtype, name="conv.w")
        self.b = Tensor(np.zeros(out_channels), dtype=dtype, name="conv.b")
        self._cols = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"channel mismatch: input has {x.shape[1]}, expected {self.in_channels}"
            )
        kh, kw = self.kernel
        self._cols = _im2col(x, kh, kw)
        return _corr_same(x, self.w.data, self.b.data, cols=self._cols)

    def backward(self, dy):
        kh, kw = self.kernel
        self.w.accumulate(_corr_grad_weights(self._cols, dy, self.in_channels, kh, kw))
        self.b.accumulate(dy.sum(axis=(0, 2, 3)))
        dx = _corr_grad_input(dy, self.w.data)
        self._cols = None
        return dx

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": list(self.kernel)}


class Deconv2d(Layer):
    """Transposed convolution, stride 2 on frequency and 1 on time.

    Defined as the exact adjoint of a stride-(2,1) zero-same-padded
    correlation with the same weights, so the frequency axis doubles
    (F -> 2F) while time is preserved. Weights are stored [Cin, Cout, kh, kw].
    """

    kind = "deconv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel=(3, 3),
                 rng: np.random.Generator | None = None, dtype=np.float32):
        kh, kw = kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValidationError(f"kernel dims must be odd, got {kernel}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kh, kw)
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kh * kw
        self.w = Tensor(kaiming_uniform((in_channels, out_channels, kh, kw), fan_in, rng, dtype),
                        dtype=dtype, name="deconv.w")
        self.b = Tensor(np.zeros(out_channels), dtype=dtype, name="deconv.b")
        self._cols = None

    def params(self):
        return [self.w, self.b]

    def _as_correlation_weights(self) -> np.ndarray:
        # The adjoint equals a plain same-padded correlation of the
        # row-zero-stuffed input with the channel-swapped, flipped kernel.
        return np.ascontiguousarray(self.w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])

    def forward(self, x, train=False):
        b, c, f, t = x.shape
        if c != self.in_channels:
            raise ShapeError(f"channel mismatch: input has {c}, expected {self.in_channels}")
        stuffed = np.zeros((b, c, 2 * f, t), dtype=x.dtype)
        stuffed[:, :, 0::2, :] = x
        kh, kw = self.kernel
        self._cols = _im2col(stuffed, kh, kw)
        return _corr_same(stuffed, self._as_correlation_weights(), self.b.data,
                          cols=self._cols)

    def backward(self, dy):
        kh, kw = self.kernel
        dv = _corr_grad_weights(self._cols, dy, self.in_channels, kh, kw)
        self.w.accumulate(np.ascontiguousarray(dv.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]))
        self.b.accumulate(dy.sum(axis=(0, 2, 3)))
        dstuffed = _corr_grad_input(dy, self._as_correlation_weights())
        self._cols = None
        return dstuffed[:, :, 0::2, :]

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": list(self.kernel),
                "stride": [2, 1]}


class MaxPoolFreq(Layer):
    """Halve the frequency axis (floor); time is untouched."""

    kind = "maxpool_freq"

    def __init__(self):
        self._idx = None
        self._in_shape = None

    def forward(self, x, train=False):
        b, c, f, t = x.shape
        if f < 2:
            raise ShapeError(f"frequency axis too short to pool: {f}")
        fo = f // 2
        windows = x[:, :, : 2 * fo, :].reshape(b, c, fo, 2, t)
        self._idx = windows.argmax(axis=3)
        self._in_shape = x.shape
        return windows.max(axis=3)

    def backward(self, dy):
        b, c, f, t = self._in_shape
        fo = f // 2
        dwin = np.zeros((b, c, fo, 2, t), dtype=dy.dtype)
        np.put_along_axis(dwin, self._idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        dx[:, :, : 2 * fo, :] = dwin.reshape(b, c, 2 * fo, t)
        self._idx = None
        self._in_shape = None
        return dx


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        dx = dy * self._mask
        self._mask = None
        return dx


class Dropout(Layer):
    """Inverted dropout: scale survivors by 1/(1-p) so eval is a no-op."""

    kind = "dropout"

    def __init__(self, p: float, rng: np.random.Generator | None = None):
        if not 0.0 <= p < 1.0:
            raise ValidationError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng or np.random.default_rng(0)
        self.fixed_mask = None  # test hook: bypass the rng with a preset mask
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        if self.fixed_mask is not None:
            mask = self.fixed_mask
        else:
            mask = self.rng.random(x.shape, dtype=np.float32) >= self.p
        self._mask = mask.astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        dx = dy * self._mask
        self._mask = None
        return dx

    def spec(self):
        return {"kind": self.kind, "p": self.p}


class FlattenFreq(Layer):
    """[B, C, F, T] -> [B, C*F, T]: per-frame feature vector."""

    kind = "flatten_freq"

    def __init__(self):
        self._in_shape = None

    def forward(self, x, train=False):
        b, c, f, t = x.shape
        self._in_shape = x.shape
        return x.reshape(b, c * f, t)

    def backward(self, dy):
        dx = dy.reshape(self._in_shape)
        self._in_shape = None
        return dx


class Linear(Layer):
    """Fully connected layer applied to every time frame independently."""

    kind = "linear"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        self.w = Tensor(kaiming_uniform((out_features, in_features), in_features, rng, dtype),
                        dtype=dtype, name="linear.w")
        self.b = Tensor(np.zeros(out_features), dtype=dtype, name="linear.b")
        self._xt = None
        self._bt = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        b, d, t = x.shape
        if d != self.in_features:
            raise ShapeError(f"feature mismatch: input has {d}, expected {self.in_features}")
        xt = np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(b * t, d)
        y = xt @ self.w.data.T + self.b.data
        self._xt = xt
        self._bt = (b, t)
        return y.reshape(b, t, self.out_features).transpose(0, 2, 1)

    def backward(self, dy):
        b, t = self._bt
        dyf = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(b * t, self.out_features)
        self.w.accumulate(dyf.T @ self._xt)
        self.b.accumulate(dyf.sum(axis=0))
        dx = (dyf @ self.w.data).reshape(b, t, self.in_features).transpose(0, 2, 1)
        self._xt = None
        self._bt = None
        return dx

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features}


class Sigmoid(Layer):
    kind = "sigmoid"

    def __init__(self):
        self._y = None

    def forward(self, x, train=False):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        self._y = y
        return y

    def backward(self, dy):
        dx = dy * self._y * (1.0 - self._y)
        self._y = None
        return dx


class SoftmaxClasses(Layer):
    """Softmax over the class axis (axis 1) of [B, n, T]."""

    kind = "softmax"

    def __init__(self):
        self._y = None

    def forward(self, x, train=False):
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=1, keepdims=True)
        self._y = y
        return y

    def backward(self, dy):
        y = self._y
        dx = y * (dy - (dy * y).sum(axis=1, keepdims=True))
        self._y = None
        return dx


class Sequential(Layer):
    """Eager chain; shape failures are re-raised with the layer index."""

    kind = "sequential"

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x, train=False):
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train)
            except (ShapeError, ValueError) as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from exc
        return x

    def backward(self, dy):
        for i in reversed(range(len(self.layers))):
            try:
                dy = self.layers[i].backward(dy)
            except (ShapeError, ValueError) as exc:
                raise ShapeError(f"layer {i} ({self.layers[i].kind}): {exc}") from exc
        return dy

    def spec(self):
        return {"kind": self.kind, "layers": [l.spec() for l in self.layers]}


def forward_backward(model: Layer, x: np.ndarray, loss_fn, labels,
                     train: bool = True) -> tuple[float, list[np.ndarray]]:
    """One training step's math: loss plus gradients for every parameter.

    `loss_fn(pred, labels)` must return (scalar loss, d loss / d pred).
    """
    model.zero_grad()
    pred = model.forward(x, train=train)
    loss, dpred = loss_fn(pred, labels)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    model.backward(dpred)
    return float(loss), [p.grad for p in model.params()]


_LAYER_BUILDERS = {
    "conv2d": lambda s, rng, dtype: Conv2d(s["in_channels"], s["out_channels"],
                                           tuple(s["kernel"]), rng=rng, dtype=dtype),
    "deconv2d": lambda s, rng, dtype: Deconv2d(s["in_channels"], s["out_channels"],
                                               tuple(s["kernel"]), rng=rng, dtype=dtype),
    "maxpool_freq": lambda s, rng, dtype: MaxPoolFreq(),
    "relu": lambda s, rng, dtype: ReLU(),
    "dropout": lambda s, rng, dtype: Dropout(s["p"], rng=rng),
    "flatten_freq": lambda s, rng, dtype: FlattenFreq(),
    "linear": lambda s, rng, dtype: Linear(s["in_features"], s["out_features"],
                                           rng=rng, dtype=dtype),
    "sigmoid": lambda s, rng, dtype: Sigmoid(),
    "softmax": lambda s, rng, dtype: SoftmaxClasses(),
}


def layer_from_spec(spec: dict, rng: np.random.Generator | None = None,
                    dtype=np.float32) -> Layer:
    kind = spec.get("kind")
    if kind == "sequential":
        return Sequential([layer_from_spec(s, rng, dtype) for s in spec["layers"]])
    if kind not in _LAYER_BUILDERS:
        raise ValidationError(f"unknown layer kind {kind!r}")
    return _LAYER_BUILDERS[kind](spec, rng, dtype)
