"""Static visualization of one piece's pipeline stages.

Stacked, frame-aligned panels: the log-mel input, the thresholded onset
vector, the raw per-frame argmax classes, the fused classes, and (when
labels are available) the target classes. Onset positions are overlaid as
red dotted lines on the class panels.
"""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .data import TechniqueClass

_CLASS_COLORS = ListedColormap(matplotlib.colormaps["tab10"].colors[: len(TechniqueClass)])


def _class_strip(ax, classes: np.ndarray, title: str) -> None:
    ax.imshow(classes[None, :], aspect="auto", interpolation="nearest",
              cmap=_CLASS_COLORS, vmin=-0.5, vmax=len(TechniqueClass) - 0.5)
    ax.set_title(title, fontsize=9, loc="left")
    ax.set_yticks([])


def render_pipeline_figure(log_mel_values: np.ndarray, onset_mask: np.ndarray,
                           raw_classes: np.ndarray, fused_classes: np.ndarray,
                           target_classes: np.ndarray | None = None):
    """Build the stacked panel figure; 4 panels, or 5 when targets are given."""
    n_panels = 4 + (target_classes is not None)
    fig, axes = plt.subplots(n_panels, 1, figsize=(10, 1.6 * n_panels),
                             sharex=True, dpi=100)
    onset_frames = np.flatnonzero(onset_mask)

    axes[0].imshow(log_mel_values, aspect="auto", origin="lower",
                   interpolation="nearest", cmap="magma")
    axes[0].set_title("log-mel input", fontsize=9, loc="left")

    axes[1].imshow(onset_mask[None, :], aspect="auto", interpolation="nearest",
                   cmap="gray_r", vmin=0, vmax=1)
    axes[1].set_title("thresholded onsets", fontsize=9, loc="left")
    axes[1].set_yticks([])

    _class_strip(axes[2], raw_classes, "raw per-frame classes")
    _class_strip(axes[3], fused_classes, "fused classes")
    if target_classes is not None:
        _class_strip(axes[4], target_classes, "target")

    for ax in axes[2:]:
        for x in onset_frames:
            ax.axvline(x - 0.5, color="red", linestyle=":", linewidth=0.7)

    axes[-1].set_xlabel("frame (0.05 s)")
    fig.tight_layout()
    return fig


def save_figure(fig, path, config_hash: str = "", seed: int | None = None) -> None:
    """Write a PNG with the run provenance in its metadata text chunks."""
    metadata = {"Software": "gztech"}
    if config_hash:
        metadata["Comment"] = f"config_hash={config_hash} seed={seed}"
    fig.savefig(path, metadata=metadata)
    plt.close(fig)
