"""Training loop for either detector.

The two detectors train separately on the same corpus of fixed-length
(12.8 s / 256 frame) sequences. Features are the float32 log-mel matrices;
the last tenth of the corpus is held out to track generalization, and a
per-epoch loss CSV plus a checkpoint are written at the end.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models
from .data import SequenceExample, TRAIN_FRAMES
from .dsp import MelConfig, log_mel
from .errors import DivergenceError, ValidationError
from .nncore import Adam


@dataclass
class TrainHyper:
    lr: float = 1e-3
    batch: int = 8
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1 or self.epochs < 1 or self.lr <= 0:
            raise ValidationError("hyperparameters out of range")


def sequence_features(ex: SequenceExample, cfg: MelConfig | None = None) -> np.ndarray:
    """Log-mel features for one sequence as float32 [1, 128, T]."""
    spec = log_mel(ex.audio, cfg or MelConfig())
    return spec.values.astype(np.float32)[None, :, :]


def build_detector(kind: str, ipt_cfg: models.IPTDetectorConfig,
                   onset_cfg: models.OnsetDetectorConfig,
                   rng: np.random.Generator):
    if kind == "ipt":
        return models.IPTDetector(ipt_cfg, rng=rng)
    if kind == "onset":
        return models.OnsetDetector(onset_cfg, rng=rng)
    if kind == "cnn_ipt":
        return models.build_cnn_ipt_detector(onset_cfg, rng=rng)
    raise ValidationError(f"unknown detector kind {kind!r}")


def _targets(kind: str, examples: list[SequenceExample]) -> np.ndarray:
    if kind == "onset":
        return np.stack([ex.onset_labels.astype(np.float32) for ex in examples])
    return np.stack([ex.ipt_labels.astype(np.int64) for ex in examples])


def _loss_fn(kind: str, beta: float):
    if kind == "onset":
        return models.wbce_loss_fn(beta)
    return models.ipt_loss_fn


def train_detector(kind: str, examples: list[SequenceExample], hyper: TrainHyper,
                   checkpoint_path, loss_csv_path=None,
                   ipt_cfg: models.IPTDetectorConfig | None = None,
                   onset_cfg: models.OnsetDetectorConfig | None = None,
                   extra_header: dict | None = None):
    """Train one detector and persist a checkpoint (plus optional loss CSV).

    Returns (detector, history) where history is a list of
    (epoch, train_loss, val_loss) tuples.
    """
    if not examples:
        raise ValidationError("training corpus is empty")
    for ex in examples:
        if ex.n_frames != TRAIN_FRAMES:
            raise ValidationError(
                f"training sequences must have {TRAIN_FRAMES} frames, got {ex.n_frames}"
            )
    ipt_cfg = ipt_cfg or models.IPTDetectorConfig()
    onset_cfg = onset_cfg or models.OnsetDetectorConfig()

    rng = np.random.default_rng(hyper.seed)
    detector = build_detector(kind, ipt_cfg, onset_cfg, rng)
    loss_fn = _loss_fn(kind, onset_cfg.beta)

    feats = np.stack([sequence_features(ex) for ex in examples])  # [N, 1, 128, 256]
    targets = _targets(kind, examples)

    n_val = max(1, len(examples) // 10) if len(examples) > 1 else 0
    train_idx = np.arange(len(examples) - n_val)
    val_idx = np.arange(len(examples) - n_val, len(examples))

    optimizer = Adam(detector.params(), lr=hyper.lr)
    history = []
    step = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(train_idx)
        losses = []
        for start in range(0, order.size, hyper.batch):
            batch = order[start : start + hyper.batch]
            xb = feats[batch]
            yb = targets[batch]
            detector.zero_grad()
            pred = detector.forward(xb, train=True)
            loss, dpred = loss_fn(pred, yb)
            if not np.isfinite(loss):
                raise DivergenceError(f"{kind} training loss became {loss}", step=step)
            detector.backward(dpred)
            try:
                optimizer.step()
            except FloatingPointError as exc:
                raise DivergenceError(str(exc), step=step) from exc
            losses.append(loss)
            step += 1
        val_loss = float("nan")
        if val_idx.size:
            pred = detector.forward(feats[val_idx], train=False)
            val_loss, _ = loss_fn(pred, targets[val_idx])
        history.append((epoch, float(np.mean(losses)), val_loss))

    if loss_csv_path is not None:
        with open(loss_csv_path, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for epoch, tr, va in history:
                fh.write(f"{epoch},{tr!r},{va!r}\n")

    extra = {"epochs": hyper.epochs, "lr": hyper.lr, "batch": hyper.batch}
    if kind in ("onset", "cnn_ipt"):
        extra["beta"] = onset_cfg.beta
    if extra_header:
        extra.update(extra_header)
    Path(checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
    models.save_detector(checkpoint_path, detector, seed=hyper.seed, step=step,
                         extra=extra)
    return detector, history
