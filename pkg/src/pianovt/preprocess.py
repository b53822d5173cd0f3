"""Keyboard crop to square model input.

Four strategies fit a wide keyboard crop into the S x S input: plain stretch,
height exaggeration then letterbox, and split-in-half-and-stack with either
letterbox or stretch. Resizes are bilinear with a widened (area-aware) kernel
when downscaling, so thin keys still contribute to the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .keyboard_region import BoundingBox, crop_frame

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

DEFAULT_TARGET = 224
DEFAULT_ASPECT_FACTOR = 4.3
MAX_JITTER_REDRAWS = 8


@dataclass(frozen=True)
class FitMode:
    kind: str  # "stretch" | "aspect" | "split" | "split-stretch"
    factor: float = DEFAULT_ASPECT_FACTOR

    KINDS = ("stretch", "aspect", "split", "split-stretch")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown fit mode {self.kind!r}")
        if not self.factor > 0:
            raise ValueError("aspect factor must be positive")

    @classmethod
    def parse(cls, text: str) -> "FitMode":
        """Parse ``stretch``, ``aspect[:F]``, ``split`` or ``split-stretch``."""
        kind, _, arg = text.strip().partition(":")
        if kind == "aspect":
            return cls("aspect", float(arg) if arg else DEFAULT_ASPECT_FACTOR)
        if arg:
            raise ValueError(f"fit mode {kind!r} takes no argument")
        return cls(kind)

    def __str__(self):
        return f"aspect:{self.factor:g}" if self.kind == "aspect" else self.kind


STRETCH = FitMode("stretch")
SPLIT = FitMode("split")
SPLIT_STRETCH = FitMode("split-stretch")


@lru_cache(maxsize=64)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """n_out x n_in triangle-filter weights, half-pixel aligned."""
    scale = n_in / n_out
    support = max(scale, 1.0)
    weights = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * scale
        lo = max(int(math.floor(center - support)), 0)
        hi = min(int(math.ceil(center + support)), n_in)
        js = np.arange(lo, hi)
        w = np.clip(1.0 - np.abs((js + 0.5 - center) / support), 0.0, None)
        if w.sum() == 0:
            # degenerate upscale at the border: nearest source pixel
            w = np.zeros(len(js))
            w[np.argmin(np.abs(js + 0.5 - center))] = 1.0
        weights[i, lo:hi] = w / w.sum()
    weights.setflags(write=False)
    return weights


def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an H x W x C image to ``height`` x ``width`` (float64 output)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    rows = _resize_matrix(h, height)
    cols = _resize_matrix(w, width)
    return np.einsum("ij,jkc,lk->ilc", rows, img, cols, optimize=True)


def _letterbox(img: np.ndarray, target: int) -> np.ndarray:
    h, w, c = img.shape
    scale = min(target / w, target / h)
    new_w = min(max(int(round(w * scale)), 1), target)
    new_h = min(max(int(round(h * scale)), 1), target)
    body = resize(img, new_h, new_w)
    out = np.zeros((target, target, c))
    top = (target - new_h) // 2
    left = (target - new_w) // 2
    out[top : top + new_h, left : left + new_w] = body
    return out


def split_stack(img: np.ndarray) -> np.ndarray:
    """Cut at the horizontal midpoint and stack left over right.

    For an odd width the left half keeps the extra column and the right half
    is padded with one black column.
    """
    h, w, c = img.shape
    half = (w + 1) // 2
    left = img[:, :half]
    right = np.zeros_like(left)
    right[:, : w - half] = img[:, half:]
    return np.concatenate([left, right], axis=0)


def fit_square(img: np.ndarray, mode: FitMode = STRETCH, target: int = DEFAULT_TARGET) -> np.ndarray:
    """Fit an H x W x C crop into a ``target`` x ``target`` float image."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ValueError(f"crop must be at least 2x2, got {w}x{h}")
    if mode.kind == "stretch":
        return resize(img, target, target)
    if mode.kind == "aspect":
        tall_h = h * mode.factor
        scale = min(target / w, target / tall_h)
        new_w = min(max(int(round(w * scale)), 1), target)
        new_h = min(max(int(round(tall_h * scale)), 1), target)
        body = resize(img, new_h, new_w)
        out = np.zeros((target, target, img.shape[2]))
        top, left = (target - new_h) // 2, (target - new_w) // 2
        out[top : top + new_h, left : left + new_w] = body
        return out
    stacked = split_stack(img)
    if mode.kind == "split":
        return _letterbox(stacked, target)
    return resize(stacked, target, target)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of a 0..255 RGB image, scaled to [0, 1], shape H x W x 1.

    Single-channel input is returned unchanged.
    """
    img = np.asarray(img)
    if img.shape[-1] == 1:
        return img
    if img.shape[-1] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {img.shape[-1]}")
    return (np.asarray(img, dtype=np.float64) @ LUMA_WEIGHTS / 255.0)[..., None]


def normalize_rgb(img: np.ndarray) -> np.ndarray:
    """Per-channel ImageNet standardization of a [0, 1] RGB image."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] != 3:
        raise ValueError("normalize_rgb requires color")
    return (img - IMAGENET_MEAN) / IMAGENET_STD


def jitter_box(
    box: BoundingBox,
    rng: np.random.Generator,
    jitter: tuple[int, int] | int,
    width: int | None = None,
    height: int | None = None,
) -> BoundingBox:
    """Move each side of ``box`` by an independent integer draw from ``jitter``.

    Positive draws push a side away from the box center, negative draws pull
    it in. ``jitter`` is a symmetric radius or an inclusive ``(lo, hi)`` range.
    The result is clipped to the image when its size is given. If all redraws
    invert the box the original is returned.
    """
    lo, hi = (-jitter, jitter) if isinstance(jitter, int) else jitter
    if lo > hi:
        raise ValueError(f"empty jitter range [{lo}, {hi}]")
    if lo == hi == 0:
        return box
    for _ in range(MAX_JITTER_REDRAWS):
        dl, dt, dr, db = rng.integers(lo, hi + 1, size=4)
        x0, y0, x1, y1 = box.x0 - dl, box.y0 - dt, box.x1 + dr, box.y1 + db
        if width is not None:
            x0, x1 = max(x0, 0), min(x1, width)
        if height is not None:
            y0, y1 = max(y0, 0), min(y1, height)
        if x0 < x1 and y0 < y1:
            return BoundingBox(int(x0), int(y0), int(x1), int(y1), box.confidence)
    return box


def add_noise(img: np.ndarray, rng: np.random.Generator, sigma: float, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Add i.i.d. Gaussian noise and clamp to ``[lo, hi]``."""
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    return np.clip(img + rng.normal(0.0, sigma, size=img.shape), lo, hi)


@dataclass(frozen=True)
class PreprocSettings:
    fit: FitMode = STRETCH
    target: int = DEFAULT_TARGET
    grayscale: bool = False
    normalize: bool = True

    @property
    def channels(self) -> int:
        return 1 if self.grayscale else 3

    def to_dict(self) -> dict:
        return {"fit": str(self.fit), "target": self.target, "grayscale": self.grayscale, "normalize": self.normalize}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocSettings":
        return cls(FitMode.parse(d["fit"]), int(d["target"]), bool(d["grayscale"]), bool(d["normalize"]))


def prepare_frame(
    frame: np.ndarray,
    box: BoundingBox,
    settings: PreprocSettings,
    rng: np.random.Generator | None = None,
    noise: float = 0.0,
) -> np.ndarray:
    """Crop, fit, convert and optionally add noise: frame -> S x S x C float32."""
    img = fit_square(crop_frame(frame, box), settings.fit, settings.target)
    if settings.grayscale:
        img = to_grayscale(img)
    else:
        img = img / 255.0
    if noise > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        img = add_noise(img, rng, noise)
    if not settings.grayscale and settings.normalize:
        img = normalize_rgb(img)
    return img.astype(np.float32)
