"""Range grid, soft labels, and PMF decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RangeGrid:
    d_min: float = 900.0
    d_max: float = 9000.0
    bin_width: float = 100.0

    @property
    def num_classes(self) -> int:
        return int(round((self.d_max - self.d_min) / self.bin_width)) + 1

    @property
    def bin_ranges(self) -> np.ndarray:
        """Range assigned to each class by the decoder."""
        return self.d_min + self.bin_width * np.arange(self.num_classes)


@dataclass(frozen=True)
class LabelConfig:
    sigma: float = 5.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def quantize_range(d, grid: RangeGrid):
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < grid.d_min) or np.any(d_arr > grid.d_max):
        raise ValueError(f"range outside [{grid.d_min}, {grid.d_max}]")
    q = np.floor((d_arr - grid.d_min) / grid.bin_width + 0.5).astype(int)
    q = np.minimum(q, grid.num_classes - 1)
    return int(q) if q.ndim == 0 else q


def soften(dq, cfg: LabelConfig, num_classes: int) -> np.ndarray:
    """Truncated-Laplace PMF around ``dq``; vectorized over an array of indices."""
    dq_arr = np.asarray(dq)
    if np.any(dq_arr < 0) or np.any(dq_arr >= num_classes):
        raise ValueError("class index out of range")
    k = np.arange(num_classes)
    logits = -np.abs(k - dq_arr[..., None]) / cfg.sigma
    w = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)


def estimate_range(p: np.ndarray, grid: RangeGrid):
    """``bin_width * argmax + d_min``; np.argmax already breaks ties toward the lower index."""
    idx = np.argmax(np.asarray(p), axis=-1)
    return grid.d_min + grid.bin_width * idx
