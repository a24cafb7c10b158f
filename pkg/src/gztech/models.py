"""The two detectors and their losses.

The technique detector is a fully convolutional encoder/decoder: five
encoder modules (two 3x3 convs + ReLU each, then frequency max-pool and
dropout) take the 128-bin input down to 4 bins, and two frequency-doubling
transposed convs bring it back to 16, with an element-wise skip connection
from the fourth encoder module's output onto the first deconv's output.
A 1x1 conv then maps to one channel per technique class, the frequency
axis is mean-pooled, and a per-frame softmax yields class probabilities.
Nothing in the stack has a fixed time extent, so any number of frames works.

The onset detector is a small CNN whose first layer runs three kernel
shapes in parallel (3x3, 3x21, 21x3, noted as frequency x time) and
concatenates them along channels; two more 3x3 convs follow, each module
ends in a frequency max-pool, and two per-frame fully connected layers
finish with a single sigmoid output per frame. Its loss is a weighted
binary cross entropy with positive-class weight beta and negative-class
weight (2 - beta).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ShapeError, ValidationError
from .nncore import (
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
    load_checkpoint,
    save_checkpoint,
)

N_MELS = 128
N_IPT = 8
PROB_EPS = 1e-7


@dataclass
class IPTDetectorConfig:
    encoder_channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    n_ipt: int = N_IPT
    dropout: float = 0.25
    skip_connection: bool = True
    input_offset: float = 13.0  # fixed affine input scaling, (x + offset) / scale
    input_scale: float = 9.0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if len(self.encoder_channels) != 5:
            raise ValidationError("exactly five encoder modules are required")
        if self.n_ipt != N_IPT:
            raise ValidationError(f"n_ipt must be {N_IPT}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout probability must be in [0, 1)")


@dataclass
class OnsetDetectorConfig:
    first_layer_channels: int = 8  # per kernel shape; concatenated when multi_shape
    conv_channels: tuple[int, int] = (32, 32)
    hidden_fc: int = 128
    multi_shape: bool = True
    beta: float = 1.94
    input_offset: float = 13.0
    input_scale: float = 9.0

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if len(self.conv_channels) != 2:
            raise ValidationError("expected two follow-up conv channel counts")
        if not 0.0 < self.beta < 2.0:
            raise ValidationError(
                f"beta must lie in (0, 2) so the negative-class weight stays positive, "
                f"got {self.beta}"
            )


FIRST_LAYER_SHAPES = ((3, 3), (3, 21), (21, 3))  # frequency x time


@dataclass
class DetectorOutput:
    """Per-frame technique probabilities [n_ipt x T] and onset probabilities [T]."""

    ipt_probs: np.ndarray
    onset_probs: np.ndarray

    def __post_init__(self):
        self.ipt_probs = np.asarray(self.ipt_probs, dtype=np.float64)
        self.onset_probs = np.asarray(self.onset_probs, dtype=np.float64)
        if self.ipt_probs.ndim != 2 or self.onset_probs.ndim != 1:
            raise ValidationError("ipt_probs must be 2-D and onset_probs 1-D")
        if self.ipt_probs.shape[1] != self.onset_probs.shape[0]:
            raise ValidationError("frame counts of the two outputs disagree")
        if self.ipt_probs.size and not np.allclose(
                self.ipt_probs.sum(axis=0), 1.0, atol=1e-3):
            raise ValidationError("ipt_probs columns must each sum to 1")
        if self.onset_probs.size and (self.onset_probs.min() < 0.0
                                      or self.onset_probs.max() > 1.0):
            raise ValidationError("onset probabilities must lie in [0, 1]")


def _check_input(x: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != N_MELS:
        raise ShapeError(
            f"expected input [B, 1, {N_MELS}, T], got {tuple(x.shape)}"
        )


class IPTDetector:
    """Fully convolutional technique detector; see the module docstring."""

    kind = "ipt"

    def __init__(self, cfg: IPTDetectorConfig | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        cfg = cfg or IPTDetectorConfig()
        self.cfg = cfg
        ch = cfg.encoder_channels
        self.encoder: list[Sequential] = []
        prev = 1
        for c in ch:
            self.encoder.append(Sequential([
                Conv2d(prev, c, (3, 3), rng=rng, dtype=dtype),
                ReLU(),
                Conv2d(c, c, (3, 3), rng=rng, dtype=dtype),
                ReLU(),
                MaxPoolFreq(),
                Dropout(cfg.dropout, rng=rng),
            ]))
            prev = c
        # Decoder widths are tied to the encoder so the skip add type-checks:
        # deconv1 emits ch[3] channels at 8 frequency bins, matching module 4.
        self.deconv1 = Deconv2d(ch[4], ch[3], (3, 3), rng=rng, dtype=dtype)
        self.relu1 = ReLU()
        self.deconv2 = Deconv2d(ch[3], ch[2], (3, 3), rng=rng, dtype=dtype)
        self.relu2 = ReLU()
        self.head = Conv2d(ch[2], cfg.n_ipt, (1, 1), rng=rng, dtype=dtype)
        self.softmax = SoftmaxClasses()
        self._head_freq = None

    def params(self) -> list[Tensor]:
        out = []
        for m in self.encoder:
            out.extend(m.params())
        out.extend(self.deconv1.params())
        out.extend(self.deconv2.params())
        out.extend(self.head.params())
        return out

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """[B, 1, 128, T] log-mel -> [B, n_ipt, T] class probabilities."""
        _check_input(x)
        h = (x + self.cfg.input_offset) / self.cfg.input_scale
        skip = None
        for i, module in enumerate(self.encoder):
            h = module.forward(h, train=train)
            if i == 3:
                skip = h
        d1 = self.deconv1.forward(h, train=train)
        if self.cfg.skip_connection:
            d1 = d1 + skip
        r1 = self.relu1.forward(d1, train=train)
        r2 = self.relu2.forward(self.deconv2.forward(r1, train=train), train=train)
        logits = self.head.forward(r2, train=train)  # [B, n_ipt, 16, T]
        self._head_freq = logits.shape[2]
        pooled = logits.mean(axis=2)
        return self.softmax.forward(pooled, train=train)

    def backward(self, dprobs: np.ndarray) -> np.ndarray:
        dpooled = self.softmax.backward(dprobs)
        f = self._head_freq
        dlogits = np.repeat(dpooled[:, :, None, :] / f, f, axis=2)
        dr2 = self.head.backward(dlogits)
        dd2 = self.relu2.backward(dr2)
        dr1 = self.deconv2.backward(dd2)
        dd1 = self.relu1.backward(dr1)
        dskip = dd1 if self.cfg.skip_connection else None
        g = self.deconv1.backward(dd1)
        g = self.encoder[4].backward(g)
        if dskip is not None:
            g = g + dskip
        for module in reversed(self.encoder[:4]):
            g = module.backward(g)
        return g / self.cfg.input_scale

    def header(self) -> dict:
        return {
            "detector": self.kind,
            "config": asdict(self.cfg),
            "layer_specs": self.layer_specs(),
        }

    def layer_specs(self) -> list[dict]:
        specs = [m.spec() for m in self.encoder]
        specs.append(self.deconv1.spec())
        if self.cfg.skip_connection:
            specs.append({"kind": "skip_add", "source": "encoder4"})
        specs.append(self.deconv2.spec())
        specs.append(self.head.spec())
        specs.append({"kind": "mean_freq"})
        specs.append(self.softmax.spec())
        return specs


class OnsetDetector:
    """Multi-shape-first-layer CNN emitting one onset probability per frame."""

    kind = "onset"

    def __init__(self, cfg: OnsetDetectorConfig | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 n_out: int = 1):
        rng = rng or np.random.default_rng(0)
        cfg = cfg or OnsetDetectorConfig()
        self.cfg = cfg
        self.n_out = n_out
        k = cfg.first_layer_channels
        if cfg.multi_shape:
            self.first = [Conv2d(1, k, shape, rng=rng, dtype=dtype)
                          for shape in FIRST_LAYER_SHAPES]
        else:
            self.first = [Conv2d(1, k * len(FIRST_LAYER_SHAPES), (3, 3),
                                 rng=rng, dtype=dtype)]
        c1, c2 = cfg.conv_channels
        first_out = k * len(FIRST_LAYER_SHAPES)
        self.trunk = Sequential([
            ReLU(),
            Conv2d(first_out, c1, (3, 3), rng=rng, dtype=dtype),
            ReLU(),
            MaxPoolFreq(),
            Conv2d(c1, c2, (3, 3), rng=rng, dtype=dtype),
            ReLU(),
            MaxPoolFreq(),
            FlattenFreq(),
            Linear(c2 * (N_MELS // 4), cfg.hidden_fc, rng=rng, dtype=dtype),
            ReLU(),
            Linear(cfg.hidden_fc, n_out, rng=rng, dtype=dtype),
        ])
        self.out_act: Sigmoid | SoftmaxClasses = (
            Sigmoid() if n_out == 1 else SoftmaxClasses()
        )

    def params(self) -> list[Tensor]:
        out = []
        for conv in self.first:
            out.extend(conv.params())
        out.extend(self.trunk.params())
        return out

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """[B, 1, 128, T] -> [B, T] onset probabilities (or [B, n, T] class probs)."""
        _check_input(x)
        h = (x + self.cfg.input_offset) / self.cfg.input_scale
        if len(self.first) == 1:
            h = self.first[0].forward(h, train=train)
        else:
            h = np.concatenate([conv.forward(h, train=train) for conv in self.first],
                               axis=1)
        h = self.trunk.forward(h, train=train)
        y = self.out_act.forward(h, train=train)
        return y[:, 0, :] if self.n_out == 1 else y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self.n_out == 1:
            dy = dy[:, None, :]
        g = self.out_act.backward(dy)
        g = self.trunk.backward(g)
        if len(self.first) == 1:
            dx = self.first[0].backward(g)
        else:
            dx = None
            offset = 0
            for conv in self.first:
                piece = g[:, offset : offset + conv.out_channels]
                d = conv.backward(np.ascontiguousarray(piece))
                dx = d if dx is None else dx + d
                offset += conv.out_channels
        return dx / self.cfg.input_scale

    def header(self) -> dict:
        return {
            "detector": "cnn_ipt" if self.n_out != 1 else self.kind,
            "config": asdict(self.cfg),
            "n_out": self.n_out,
            "layer_specs": self.layer_specs(),
        }

    def layer_specs(self) -> list[dict]:
        if len(self.first) == 1:
            specs: list[dict] = [self.first[0].spec()]
        else:
            specs = [{"kind": "concat_channels",
                      "branches": [conv.spec() for conv in self.first]}]
        specs.extend(self.trunk.spec()["layers"])
        specs.append({"kind": "sigmoid" if self.n_out == 1 else "softmax"})
        return specs


def build_cnn_ipt_detector(cfg: OnsetDetectorConfig,
                           rng: np.random.Generator | None = None,
                           dtype=np.float32) -> OnsetDetector:
    """Ablation variant: the onset detector's CNN topology classifying techniques."""
    return OnsetDetector(cfg, rng=rng, dtype=dtype, n_out=N_IPT)


# ---------------------------------------------------------------------------
# Losses (all operate on probabilities and return (loss, d loss / d probs))
# ---------------------------------------------------------------------------

def wbce_loss(x: np.ndarray, y: np.ndarray, beta: float = 1.94) -> float:
    """Weighted binary cross entropy, averaged over frames.

    loss = -mean(beta * y * log(x) + (2 - beta) * (1 - y) * log(1 - x));
    beta = 1 recovers the standard BCE. Probabilities are clamped to
    [eps, 1 - eps] before the logs.
    """
    if not 0.0 < beta < 2.0:
        raise ValidationError(f"beta must be in (0, 2), got {beta}")
    x = np.clip(np.asarray(x, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    terms = beta * y * np.log(x) + (2.0 - beta) * (1.0 - y) * np.log1p(-x)
    return float(-terms.mean())


def wbce_grad(x: np.ndarray, y: np.ndarray, beta: float = 1.94) -> np.ndarray:
    xc = np.clip(np.asarray(x, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    g = -(beta * y / xc - (2.0 - beta) * (1.0 - y) / (1.0 - xc)) / x.size
    return g.astype(x.dtype, copy=False)


def wbce_loss_fn(beta: float):
    def fn(pred, labels):
        return wbce_loss(pred, labels, beta), wbce_grad(pred, labels, beta)

    return fn


def ipt_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean per-frame categorical cross entropy on [.., n_ipt, T] probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 2:
        probs = probs[None]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 1:
        labels = labels[None]
    n = probs.shape[1]
    if labels.min() < 0 or labels.max() >= n:
        raise ValidationError(f"class labels must lie in [0, {n})")
    picked = np.take_along_axis(probs, labels[:, None, :], axis=1)[:, 0, :]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def ipt_loss_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    squeeze = probs.ndim == 2
    p = np.asarray(probs, dtype=np.float64)
    if squeeze:
        p = p[None]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 1:
        labels = labels[None]
    b, n, t = p.shape
    grad = np.zeros_like(p)
    rows = np.take_along_axis(p, labels[:, None, :], axis=1)[:, 0, :]
    np.put_along_axis(grad, labels[:, None, :],
                      (-1.0 / (np.maximum(rows, 1e-12) * b * t))[:, None, :], axis=1)
    if squeeze:
        grad = grad[0]
    return grad.astype(probs.dtype, copy=False)


def ipt_loss_fn(pred, labels):
    return ipt_loss(pred, labels), ipt_loss_grad(pred, labels)


# ---------------------------------------------------------------------------
# Checkpoint round trip
# ---------------------------------------------------------------------------

def save_detector(path, detector, seed: int, step: int, extra: dict | None = None) -> None:
    header = detector.header()
    header["seed"] = seed
    header["step"] = step
    if extra:
        header.update(extra)
    save_checkpoint(path, header, detector.params())


def load_detector(path):
    """Rebuild a detector from a checkpoint; returns (detector, header)."""
    header, values = load_checkpoint(path)
    kind = header.get("detector")
    cfg_dict = dict(header["config"])
    if kind == "ipt":
        cfg = IPTDetectorConfig(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in cfg_dict.items()})
        det = IPTDetector(cfg)
    elif kind in ("onset", "cnn_ipt"):
        cfg = OnsetDetectorConfig(**{k: tuple(v) if isinstance(v, list) else v
                                     for k, v in cfg_dict.items()})
        det = OnsetDetector(cfg, n_out=int(header.get("n_out", 1)))
    else:
        raise ValidationError(f"unknown detector kind {kind!r} in {path}")
    params = det.params()
    if len(params) != len(values):
        raise ValidationError(
            f"checkpoint has {len(values)} parameters, model needs {len(params)}"
        )
    for p, v in zip(params, values):
        if tuple(p.shape) != tuple(v.shape):
            raise ValidationError(
                f"parameter {p.name} shape {p.shape} != stored {v.shape}"
            )
        p.data = v.astype(p.dtype)
    return det, header
