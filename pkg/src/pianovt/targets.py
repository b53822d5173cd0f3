"""Training labels from note onsets.

Each onset marks its nearest frame and both neighbours. A 16-frame window
starting at ``s`` is labelled from its central pair ``(s + 7, s + 8)``: 1 when
both are marked, 0.5 when one is. An isolated onset therefore yields two
windows at 1.0 and two at 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .smf import N_KEYS, NoteEvent

WINDOW_LEN = 16
CENTER_LEFT = 7
CENTER_RIGHT = 8
DEFAULT_KEEP_FRACTION = 0.05

# absorbs representation error when onset * fps lands on an exact half frame
_HALF_UP_SLACK = 1e-9


def nearest_frame(onset: float, fps: float) -> int:
    """Nearest frame index, exact halves rounding up."""
    return int(math.floor(onset * fps + 0.5 + _HALF_UP_SLACK))


@dataclass
class FrameOnsetMap:
    fps: float
    marks: list[np.ndarray] = field(default_factory=lambda: [np.zeros(0, dtype=np.int64) for _ in range(N_KEYS)])

    def dense(self, n_frames: int | None = None) -> np.ndarray:
        """88 x n_frames boolean mark matrix (marks beyond ``n_frames`` are dropped)."""
        if n_frames is None:
            n_frames = 1 + max((int(m[-1]) for m in self.marks if len(m)), default=-1)
        out = np.zeros((N_KEYS, n_frames), dtype=bool)
        for k, m in enumerate(self.marks):
            m = m[m < n_frames]
            out[k, m] = True
        return out


def onsets_to_frames(notes: Sequence[NoteEvent], fps: float = 30.0) -> FrameOnsetMap:
    if fps <= 0:
        raise ValueError("fps must be positive")
    per_key: list[set[int]] = [set() for _ in range(N_KEYS)]
    for note in notes:
        n = nearest_frame(note.onset, fps)
        per_key[note.pitch - 21].update(f for f in (n - 1, n, n + 1) if f >= 0)
    return FrameOnsetMap(fps, [np.array(sorted(s), dtype=np.int64) for s in per_key])


def window_label(onset_map: FrameOnsetMap, s: int) -> np.ndarray:
    """88-vector of labels in {0, 0.5, 1} for the window starting at frame ``s``."""
    label = np.zeros(N_KEYS)
    for k, m in enumerate(onset_map.marks):
        if len(m):
            hits = np.isin((s + CENTER_LEFT, s + CENTER_RIGHT), m).sum()
            label[k] = 0.5 * hits
    return label


def window_labels(onset_map: FrameOnsetMap, n_frames: int) -> np.ndarray:
    """Labels for every window start 0..n_frames-16, as a (windows x 88) matrix."""
    n_windows = n_frames - WINDOW_LEN + 1
    if n_windows <= 0:
        return np.zeros((0, N_KEYS))
    dense = onset_map.dense(n_frames).astype(np.float64)
    left = dense[:, CENTER_LEFT : CENTER_LEFT + n_windows]
    right = dense[:, CENTER_RIGHT : CENTER_RIGHT + n_windows]
    return (0.5 * (left + right)).T


def cull_empty(samples, rng: np.random.Generator, keep_fraction: float = DEFAULT_KEEP_FRACTION):
    """Drop all-zero-label samples, each kept independently with ``keep_fraction``.

    ``samples`` holds ``(window, label)`` pairs; positive samples always survive.
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in [0, 1]")
    kept = []
    for window, label in samples:
        if np.any(np.asarray(label) > 0) or rng.random() < keep_fraction:
            kept.append((window, label))
    return kept
