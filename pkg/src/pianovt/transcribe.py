"""Whole-video inference and onset post-processing.

Window ``s`` (frames s..s+15) is attributed to frame ``s + 8``. The activation
matrix is smoothed along time with a Gaussian, thresholded, and each run of
active frames becomes one onset at the run's midpoint.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .keyboard_region import BoundingBox
from .model import VideoTransformer
from .preprocess import PreprocSettings, prepare_frame
from .smf import LOWEST_PITCH, N_KEYS, NoteEvent
from .targets import CENTER_RIGHT, WINDOW_LEN
from .video_io import VideoManifest, read_frame

DEFAULT_SIGMA = 1.0
DEFAULT_RADIUS = 16
DEFAULT_THRESHOLD = 0.5


class TranscriptionError(ValueError):
    pass


@dataclass
class ActivationMatrix:
    values: np.ndarray  # 88 x F
    first_frame: int
    fps: float

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame", "key", "value"])
            for col in range(self.n_columns):
                for key in range(N_KEYS):
                    writer.writerow([self.first_frame + col, key, f"{self.values[key, col]:.6f}"])


def prepare_video(manifest: VideoManifest, box: BoundingBox, settings: PreprocSettings) -> np.ndarray:
    """Every frame cropped and fitted once: N x S x S x C float32."""
    frames = np.empty((manifest.frame_count, settings.target, settings.target, settings.channels), dtype=np.float32)
    for i in range(manifest.frame_count):
        frames[i] = prepare_frame(read_frame(manifest, i), box, settings)
    return frames


@torch.no_grad()
def predict_frames(
    frames: np.ndarray, params: VideoTransformer, fps: float, batch_size: int = 64, drop_last_window: bool = False
) -> ActivationMatrix:
    """Sliding-window predictions over prepared frames (stride 1)."""
    n = len(frames)
    if n < WINDOW_LEN:
        raise TranscriptionError(f"video too short: {n} frames, need {WINDOW_LEN}")
    n_windows = n - WINDOW_LEN + 1
    if drop_last_window:
        n_windows -= 1
    dtype = next(params.parameters()).dtype
    params.eval()
    views = np.lib.stride_tricks.sliding_window_view(frames, WINDOW_LEN, axis=0)[:n_windows]  # W x S x S x C x 16
    out = np.empty((N_KEYS, n_windows))
    for start in range(0, n_windows, batch_size):
        chunk = np.moveaxis(views[start : start + batch_size], -1, 1)
        out[:, start : start + len(chunk)] = params(torch.as_tensor(np.array(chunk), dtype=dtype)).T.numpy()
    return ActivationMatrix(out, first_frame=CENTER_RIGHT, fps=fps)


def sliding_predict(
    manifest: VideoManifest,
    box: BoundingBox,
    params: VideoTransformer,
    settings: PreprocSettings,
    batch_size: int = 64,
    drop_last_window: bool = False,
) -> ActivationMatrix:
    if manifest.frame_count < WINDOW_LEN:
        raise TranscriptionError(f"video too short: {manifest.frame_count} frames, need {WINDOW_LEN}")
    frames = prepare_video(manifest, box, settings)
    return predict_frames(frames, params, manifest.fps, batch_size, drop_last_window)


def gaussian_kernel(sigma: float = DEFAULT_SIGMA, radius: int = DEFAULT_RADIUS) -> np.ndarray:
    k = np.arange(-radius, radius + 1)
    w = np.exp(-(k**2) / (2.0 * sigma**2))
    return w / w.sum()


def smooth_time(act: ActivationMatrix, sigma: float = DEFAULT_SIGMA, radius: int = DEFAULT_RADIUS) -> ActivationMatrix:
    """Gaussian smoothing along time, per key, with reflected boundaries."""
    values = correlate1d(np.asarray(act.values, dtype=np.float64), gaussian_kernel(sigma, radius), axis=1, mode="reflect")
    return ActivationMatrix(np.clip(values, 0.0, 1.0), act.first_frame, act.fps)


def binarize(act: ActivationMatrix, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    values = act.values if isinstance(act, ActivationMatrix) else np.asarray(act)
    return values >= threshold


def extract_notes(binary: np.ndarray, first_frame: int, fps: float) -> list[NoteEvent]:
    """One onset per maximal run of active columns, at the (floored) run midpoint."""
    binary = np.asarray(binary, dtype=bool)
    padded = np.zeros((binary.shape[0], binary.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = binary
    edges = np.diff(padded, axis=1)
    keys, starts = np.nonzero(edges == 1)
    _, ends = np.nonzero(edges == -1)  # row-major order pairs each start with its end
    frames = first_frame + (starts + ends - 1) // 2
    notes = [NoteEvent(f / fps, LOWEST_PITCH + int(k)) for k, f in zip(keys, frames)]
    notes.sort()
    return notes


def postprocess(
    act: ActivationMatrix,
    sigma: float = DEFAULT_SIGMA,
    radius: int = DEFAULT_RADIUS,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[NoteEvent]:
    smoothed = smooth_time(act, sigma, radius)
    return extract_notes(binarize(smoothed, threshold), smoothed.first_frame, smoothed.fps)
