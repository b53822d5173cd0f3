"""Dataset assembly and the training loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .keyboard_region import BoundingBox, crop_frame
from .model import AdamWState, VideoTransformer, adamw_step, grad, lr_schedule, save_checkpoint
from .preprocess import IMAGENET_MEAN, IMAGENET_STD, PreprocSettings, fit_square, jitter_box, to_grayscale
from .smf import NoteEvent
from .targets import DEFAULT_KEEP_FRACTION, WINDOW_LEN, onsets_to_frames, window_labels

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 6.25e-5
    weight_decay: float = 0.05
    warmup_frac: float = 0.05
    total_steps: int = 1000
    class_weight: float = 1.0
    seed: int = 0
    keep_fraction: float = DEFAULT_KEEP_FRACTION
    noise: float = 0.0
    jitter: tuple[int, int] | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight decay non-negative")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.class_weight < 1:
            raise ValueError("class weight must be >= 1")


def unit_frame(frame: np.ndarray, box: BoundingBox, settings: PreprocSettings) -> np.ndarray:
    """Crop and fit, then scale to [0, 1] (grayscale or RGB), without normalization."""
    img = fit_square(crop_frame(frame, box), settings.fit, settings.target)
    img = to_grayscale(img) if settings.grayscale else img / 255.0
    return img.astype(np.float32)


def finalize(batch: np.ndarray, settings: PreprocSettings) -> np.ndarray:
    if settings.grayscale or not settings.normalize:
        return batch
    return ((batch - IMAGENET_MEAN) / IMAGENET_STD).astype(np.float32)


@dataclass
class VideoData:
    """One training video: fitted [0, 1] frames plus per-window labels."""

    frames: np.ndarray  # N x S x S x C
    labels: np.ndarray  # windows x 88
    raw: np.ndarray | None = None  # N x H x W x 3, kept only for spatial jitter
    box: BoundingBox | None = None

    @classmethod
    def build(cls, raw: np.ndarray, box: BoundingBox, notes: list[NoteEvent], fps: float,
              settings: PreprocSettings, keep_raw: bool = False) -> "VideoData":
        frames = np.stack([unit_frame(f, box, settings) for f in raw])
        labels = window_labels(onsets_to_frames(notes, fps), len(raw))
        return cls(frames, labels, raw if keep_raw else None, box)


@dataclass
class Dataset:
    videos: list[VideoData]
    index: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))  # (video, start) rows

    @classmethod
    def assemble(cls, videos: list[VideoData], rng: np.random.Generator,
                 keep_fraction: float = DEFAULT_KEEP_FRACTION) -> "Dataset":
        """All windows with a positive label plus a ``keep_fraction`` share of empty ones."""
        rows = []
        for v, video in enumerate(videos):
            positive = video.labels.max(axis=1) > 0
            keep = positive | (rng.random(len(positive)) < keep_fraction)
            rows.extend((v, s) for s in np.flatnonzero(keep))
        return cls(videos, np.array(rows, dtype=np.int64).reshape(-1, 2))

    def __len__(self):
        return len(self.index)

    def n_positive(self) -> int:
        return int(sum(self.videos[v].labels[s].max() > 0 for v, s in self.index))

    def batch(self, rows: np.ndarray, settings: PreprocSettings, rng: np.random.Generator,
              noise: float = 0.0, jitter: tuple[int, int] | None = None) -> tuple[np.ndarray, np.ndarray]:
        clips, targets = [], []
        for v, s in rows:
            video = self.videos[v]
            if jitter is not None and video.raw is not None:
                h, w = video.raw.shape[1:3]
                box = jitter_box(video.box, rng, jitter, w, h)
                clip = np.stack([unit_frame(f, box, settings) for f in video.raw[s : s + WINDOW_LEN]])
            else:
                clip = video.frames[s : s + WINDOW_LEN]
            if noise > 0:
                clip = np.clip(clip + rng.normal(0.0, noise, size=clip.shape), 0.0, 1.0).astype(np.float32)
            clips.append(clip)
            targets.append(video.labels[s])
        return finalize(np.stack(clips), settings), np.stack(targets).astype(np.float32)


def train(
    model: VideoTransformer,
    data: Dataset,
    config: TrainConfig,
    settings: PreprocSettings,
    metrics_csv=None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    log_every: int = 100,
) -> list[float]:
    """Run ``config.total_steps`` AdamW steps over shuffled epochs; returns per-step losses."""
    if len(data) == 0:
        raise ValueError("no training samples")
    torch.manual_seed(config.seed)
    order_rng = np.random.default_rng([config.seed, 11])
    aug_rng = np.random.default_rng([config.seed, 12])
    state = AdamWState()
    losses: list[float] = []
    writer = None
    handle = None
    if metrics_csv is not None:
        new = not Path(metrics_csv).exists()
        handle = open(metrics_csv, "a", newline="")
        writer = csv.writer(handle)
        if new:
            writer.writerow(["step", "lr", "loss"])
    meta = {"preproc": settings.to_dict(), "class_weight": config.class_weight}
    model.train()
    order = np.empty(0, dtype=np.int64)
    cursor = 0
    t0 = time.time()
    try:
        for step in range(config.total_steps):
            if cursor + config.batch_size > len(order):
                order = order_rng.permutation(len(data))
                cursor = 0
                if len(order) < config.batch_size:
                    order = order_rng.choice(len(data), config.batch_size)
            rows = data.index[order[cursor : cursor + config.batch_size]]
            cursor += config.batch_size
            clips, targets = data.batch(rows, settings, aug_rng, config.noise, config.jitter)
            lr = lr_schedule(step, config.total_steps, config.warmup_frac, config.lr)
            loss, grads = grad(model, (clips, targets), config.class_weight)
            adamw_step(model, grads, state, lr, config.weight_decay)
            losses.append(loss)
            if writer is not None:
                writer.writerow([step, f"{lr:.8g}", f"{loss:.6f}"])
            if log_every and (step + 1) % log_every == 0:
                recent = float(np.mean(losses[-log_every:]))
                log.info("step %d/%d lr %.3g loss %.4f (%.1fs)", step + 1, config.total_steps, lr, recent, time.time() - t0)
            if checkpoint_path and checkpoint_every and (step + 1) % checkpoint_every == 0:
                save_checkpoint(checkpoint_path, model, {**meta, "step": step + 1})
    finally:
        if handle is not None:
            handle.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, {**meta, "step": config.total_steps})
    model.eval()
    return losses
