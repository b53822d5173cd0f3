"""Static keyboard bounding-box selection and cropping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SCAN_FRAMES = 30
MIN_CLAMP_OVERLAP = 0.9


class RegionError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Pixel rectangle, inclusive-exclusive: columns x0..x1-1, rows y0..y1-1."""

    x0: int
    y0: int
    x1: int
    y1: int
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise RegionError(f"degenerate box {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise RegionError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height


# frame index -> candidates for that frame
DetectionSet = dict[int, list[BoundingBox]]


def read_detections(path, max_frames: int = DEFAULT_SCAN_FRAMES) -> DetectionSet:
    """Read ``frame_index x0 y0 x1 y1 confidence`` lines, keeping frames < ``max_frames``."""
    detections: DetectionSet = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise RegionError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            frame = int(parts[0])
            x0, y0, x1, y1 = (int(round(float(v))) for v in parts[1:5])
            conf = float(parts[5])
        except ValueError as exc:
            raise RegionError(f"{path}:{lineno}: {exc}") from exc
        if frame < 0:
            raise RegionError(f"{path}:{lineno}: negative frame index")
        if frame >= max_frames:
            continue
        detections.setdefault(frame, []).append(BoundingBox(x0, y0, x1, y1, conf))
    return detections


def write_detections(path, detections: DetectionSet) -> None:
    lines = []
    for frame in sorted(detections):
        for b in detections[frame]:
            lines.append(f"{frame} {b.x0} {b.y0} {b.x1} {b.y1} {b.confidence:.6f}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def select_box(detections: DetectionSet) -> BoundingBox:
    """Most confident candidate over all scanned frames.

    Ties go to the earliest frame, then the smallest x0.
    """
    best = None
    best_key = None
    for frame in sorted(detections):
        for box in detections[frame]:
            key = (-box.confidence, frame, box.x0)
            if best_key is None or key < best_key:
                best, best_key = box, key
    if best is None:
        raise RegionError("no keyboard detected")
    return best


def clamp_box(box: BoundingBox, width: int, height: int) -> BoundingBox:
    """Clip ``box`` to a ``width`` x ``height`` image.

    Boxes keeping at least 90% of their area are clamped with a warning;
    anything worse is rejected.
    """
    x0, y0 = max(box.x0, 0), max(box.y0, 0)
    x1, y1 = min(box.x1, width), min(box.y1, height)
    if (x0, y0, x1, y1) == (box.x0, box.y0, box.x1, box.y1):
        return box
    inter = max(0, x1 - x0) * max(0, y1 - y0)
    overlap = inter / box.area
    if overlap < MIN_CLAMP_OVERLAP:
        raise RegionError(f"box {box} lies outside the {width}x{height} frame (overlap {overlap:.1%})")
    log.warning("box %s clamped to frame bounds (overlap %.1f%%)", box, 100 * overlap)
    return replace(box, x0=x0, y0=y0, x1=x1, y1=y1)


def crop_frame(frame: np.ndarray, box: BoundingBox) -> np.ndarray:
    h, w = frame.shape[:2]
    box = clamp_box(box, w, h)
    return frame[box.y0 : box.y1, box.x0 : box.x1].copy()
