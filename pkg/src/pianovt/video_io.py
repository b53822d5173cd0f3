"""Frame-directory video ingestion.

A video is a directory of binary PPM (P6) frames described by a small
``key=value`` manifest. Frame indices are 0-based and the manifest fps is
the only timing information.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

MANIFEST_KEYS = ("frame_dir", "frame_pattern", "frame_count", "fps", "width", "height")
DEFAULT_PATTERN = "frame_%06d.ppm"


class VideoError(ValueError):
    pass


@dataclass(frozen=True)
class VideoManifest:
    frame_dir: Path
    frame_pattern: str
    frame_count: int
    fps: float
    width: int
    height: int

    def frame_path(self, index: int) -> Path:
        return self.frame_dir / (self.frame_pattern % index)


@dataclass
class VideoClip:
    """``frames`` is T x H x W x C uint8; ``origin_frame`` locates frame 0 in the source."""

    frames: np.ndarray
    fps: float
    origin_frame: int = 0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] not in (1, 3):
            raise VideoError(f"clip must be T x H x W x C with C in (1, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise VideoError("clip must hold at least one frame")


ClipWindow = VideoClip


def _parse_fps(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise VideoError(f"bad fps value {text!r}") from exc


def _count_frames(frame_dir: Path, pattern: str) -> int:
    # count contiguous indices from 0, then make sure nothing else matches the pattern
    n = 0
    while (frame_dir / (pattern % n)).is_file():
        n += 1
    regex = re.compile("^" + re.sub(r"%0?\d*d", r"(\\d+)", re.escape(pattern).replace(r"\%", "%")) + "$")
    extra = 0
    if frame_dir.is_dir():
        extra = sum(1 for name in os.listdir(frame_dir) if regex.match(name)) - n
    if extra > 0:
        raise VideoError(f"frame files in {frame_dir} are not contiguous from index 0")
    return n


def read_manifest(path) -> VideoManifest:
    """Parse and validate a manifest file.

    ``frame_dir`` is resolved relative to the manifest's directory. The number
    of frame files on disk must equal ``frame_count``.
    """
    path = Path(path)
    if not path.is_file():
        raise VideoError(f"manifest not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise VideoError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in MANIFEST_KEYS:
            raise VideoError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value

    values.setdefault("fps", "30")
    values.setdefault("frame_pattern", DEFAULT_PATTERN)
    values.setdefault("frame_dir", ".")
    for key in ("frame_count", "width", "height"):
        if key not in values:
            raise VideoError(f"missing required key {key!r}")

    fps = _parse_fps(values["fps"])
    if fps <= 0:
        raise VideoError("non-positive fps")
    try:
        frame_count = int(values["frame_count"])
        width = int(values["width"])
        height = int(values["height"])
    except ValueError as exc:
        raise VideoError(f"non-integer manifest field: {exc}") from exc
    if frame_count < 0:
        raise VideoError("frame_count must be >= 0")
    if width < 1 or height < 1:
        raise VideoError("width and height must be >= 1")

    frame_dir = Path(values["frame_dir"])
    if not frame_dir.is_absolute():
        frame_dir = path.parent / frame_dir
    pattern = values["frame_pattern"]
    try:
        pattern % 0
    except (TypeError, ValueError) as exc:
        raise VideoError(f"bad frame_pattern {pattern!r}") from exc

    found = _count_frames(frame_dir, pattern)
    if found != frame_count:
        raise VideoError(f"frame_count mismatch: manifest says {frame_count}, found {found} files")
    return VideoManifest(frame_dir, pattern, frame_count, fps, width, height)


def write_manifest(path, manifest: VideoManifest) -> None:
    path = Path(path)
    frame_dir = manifest.frame_dir
    try:
        frame_dir = frame_dir.relative_to(path.parent)
    except ValueError:
        pass
    fps = Fraction(manifest.fps).limit_denominator(1001)
    lines = [
        f"frame_dir={frame_dir}",
        f"frame_pattern={manifest.frame_pattern}",
        f"frame_count={manifest.frame_count}",
        f"fps={fps}",
        f"width={manifest.width}",
        f"height={manifest.height}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise VideoError("malformed PPM header: truncated")
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 image with maxval 255 into an H x W x 3 uint8 array."""
    if data[:2] != b"P6":
        raise VideoError(f"unsupported format {data[:2]!r}: only binary P6 is read")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        if not tok.isdigit():
            raise VideoError(f"malformed PPM header: {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise VideoError(f"unsupported PPM maxval {maxval}")
    if width < 1 or height < 1:
        raise VideoError("malformed PPM header: empty image")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * 3
    body = data[pos : pos + expected]
    if len(body) != expected:
        raise VideoError(f"truncated PPM body: {len(body)} of {expected} bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(frame: np.ndarray) -> bytes:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.dtype != np.uint8:
        raise VideoError(f"expected H x W x 3 uint8 frame, got {frame.dtype} {frame.shape}")
    h, w, _ = frame.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(frame).tobytes()


def read_frame(manifest: VideoManifest, index: int) -> np.ndarray:
    if not 0 <= index < manifest.frame_count:
        raise VideoError(f"frame index {index} out of range [0, {manifest.frame_count})")
    frame = decode_ppm(manifest.frame_path(index).read_bytes())
    if frame.shape[:2] != (manifest.height, manifest.width):
        raise VideoError(
            f"dimension mismatch: frame {index} is {frame.shape[1]}x{frame.shape[0]}, "
            f"manifest says {manifest.width}x{manifest.height}"
        )
    return frame


def read_all_frames(manifest: VideoManifest) -> np.ndarray:
    out = np.empty((manifest.frame_count, manifest.height, manifest.width, 3), dtype=np.uint8)
    for i in range(manifest.frame_count):
        out[i] = read_frame(manifest, i)
    return out


def window_count(frame_count: int, window_len: int = 16, stride: int = 1) -> int:
    if window_len > frame_count:
        return 0
    return (frame_count - window_len) // stride + 1


def iter_windows(manifest: VideoManifest, window_len: int = 16, stride: int = 1) -> Iterator[VideoClip]:
    """Yield consecutive ``window_len``-frame clips starting at 0, stride, 2*stride, ...

    A video shorter than the window yields nothing and logs a warning. Frames
    shared between overlapping windows are decoded once.
    """
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be positive")
    n = window_count(manifest.frame_count, window_len, stride)
    if n == 0:
        log.warning("video has %d frames, fewer than window length %d", manifest.frame_count, window_len)
        return
    cache: dict[int, np.ndarray] = {}
    for w in range(n):
        start = w * stride
        for i in [k for k in cache if k < start]:
            del cache[i]
        frames = []
        for i in range(start, start + window_len):
            if i not in cache:
                cache[i] = read_frame(manifest, i)
            frames.append(cache[i])
        yield VideoClip(np.stack(frames), manifest.fps, origin_frame=start)
