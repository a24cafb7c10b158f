"""Decision fusion of the onset and technique detectors.

The binary onset vector splits the timeline into segments; within each
segment the per-frame technique probabilities are summed ("voted") and the
whole segment takes the winning class. Segment boundaries are a function
of the onset vector alone; voting only changes classes within them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FRAME_DURATION, NoteEvent, TechniqueClass
from .errors import ValidationError


@dataclass
class FusedResult:
    """One-hot class matrix [n x t] plus (start, end, class) segments.

    `end` is the inclusive last frame of the segment; segments chain to
    partition [0, t). Exactly one class is set per frame.
    """

    one_hot: np.ndarray
    segments: list[tuple[int, int, int]]

    def frame_classes(self) -> np.ndarray:
        t = self.one_hot.shape[1]
        classes = np.zeros(t, dtype=np.int64)
        for start, end, cls in self.segments:
            classes[start : end + 1] = cls
        return classes


def threshold_onsets(onset_probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary onset vector: 1 where probability >= threshold (ties count)."""
    probs = np.asarray(onset_probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValidationError(f"onset probabilities must be 1-D, got shape {probs.shape}")
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ValidationError("onset probabilities must lie in [0, 1]")
    return (probs >= threshold).astype(np.uint8)


def suppress_close_onsets(onset_mask: np.ndarray, min_gap_frames: int) -> np.ndarray:
    """Optional cleanup (off by default in the pipeline): drop onsets that
    follow a kept onset within min_gap_frames."""
    out = np.zeros_like(onset_mask)
    last = -(min_gap_frames + 1)
    for i in np.flatnonzero(onset_mask):
        if i - last > min_gap_frames:
            out[i] = 1
            last = i
    return out


def decision_fusion(onset_mask: np.ndarray, ipt_probs: np.ndarray) -> FusedResult:
    """Assign one technique class per inter-onset segment by summed voting.

    Scores accumulate frame by frame; a segment closes right before each
    detected onset (and at the end of the sequence), takes the argmax of its
    accumulated scores (ties to the lowest class id), and the scores reset.
    A leading segment before the first onset is kept and voted like any other.
    """
    onset_mask = np.asarray(onset_mask)
    ipt_probs = np.asarray(ipt_probs, dtype=np.float64)
    if ipt_probs.ndim != 2:
        raise ValidationError(f"class probabilities must be [n, t], got {ipt_probs.shape}")
    n, t = ipt_probs.shape
    if t < 1:
        raise ValidationError("need at least one frame")
    if onset_mask.shape != (t,):
        raise ValidationError(
            f"onset vector length {onset_mask.shape} does not match {t} frames"
        )

    # Segment starts: frame 0 plus every onset after it.
    starts = np.flatnonzero(onset_mask[1:]) + 1
    starts = np.concatenate(([0], starts))
    votes = np.add.reduceat(ipt_probs, starts, axis=1)  # [n, n_segments]
    winners = votes.argmax(axis=0)

    one_hot = np.zeros((n, t), dtype=np.uint8)
    segments = []
    for j, start in enumerate(starts):
        end = (starts[j + 1] - 1) if j + 1 < starts.size else t - 1
        cls = int(winners[j])
        one_hot[cls, start : end + 1] = 1
        segments.append((int(start), int(end), cls))
    return FusedResult(one_hot=one_hot, segments=segments)


def frames_to_segments(classes: np.ndarray, n_classes: int = 8) -> FusedResult:
    """Run-length segments of a per-frame class sequence (the no-fusion path)."""
    classes = np.asarray(classes, dtype=np.int64)
    if classes.ndim != 1 or classes.size < 1:
        raise ValidationError("need a non-empty 1-D class sequence")
    if classes.min() < 0 or classes.max() >= n_classes:
        raise ValidationError(f"class ids must lie in [0, {n_classes})")
    t = classes.size
    boundaries = np.flatnonzero(np.diff(classes)) + 1
    starts = np.concatenate(([0], boundaries))
    one_hot = np.zeros((n_classes, t), dtype=np.uint8)
    one_hot[classes, np.arange(t)] = 1
    segments = []
    for j, start in enumerate(starts):
        end = (starts[j + 1] - 1) if j + 1 < starts.size else t - 1
        segments.append((int(start), int(end), int(classes[start])))
    return FusedResult(one_hot=one_hot, segments=segments)


def segments_to_events(result: FusedResult,
                       frame_duration: float = FRAME_DURATION) -> list[NoteEvent]:
    """Each segment becomes an event spanning [start, end + 1) frames."""
    return [
        NoteEvent(onset=start * frame_duration,
                  offset=(end + 1) * frame_duration,
                  technique=TechniqueClass(cls))
        for start, end, cls in result.segments
    ]
