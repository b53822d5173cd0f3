"""Synthetic top-down keyboard videos with matching ground-truth MIDI.

Keys are drawn as flat rectangles, lowest pitch on the left. A pressed key is
darkened for a fixed number of frames starting at the nearest frame to its
onset. Output is a frame directory readable by :mod:`video_io`, a MIDI file
and a detection file holding the true keyboard box.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .keyboard_region import BoundingBox, write_detections
from .smf import LOWEST_PITCH, N_KEYS, NoteEvent, write_smf
from .targets import WINDOW_LEN, nearest_frame
from .video_io import DEFAULT_PATTERN, VideoManifest, encode_ppm, write_manifest

BLACK_PITCH_CLASSES = {1, 3, 6, 8, 10}
WHITE_COLOR = np.array([235, 235, 230], dtype=np.float64)
BLACK_COLOR = np.array([120, 115, 115], dtype=np.float64)
GAP_COLOR = np.array([40, 40, 40], dtype=np.float64)
BACKGROUND_COLOR = np.array([70, 50, 35], dtype=np.float64)
TICKS_PER_SECOND = 960  # onsets are snapped to the MIDI writer's tick grid

MANIFEST_NAME = "manifest.txt"
MIDI_NAME = "notes.mid"
DETECTIONS_NAME = "detections.txt"
FRAMES_DIR = "frames"


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    duration: float = 120.0
    fps: float = 30.0
    width: int = 240
    height: int = 48
    margin_x: int = 8
    margin_y: int = 8
    white_key_width: int = 4
    black_height_frac: float = 0.6
    descending: bool = False  # True puts the highest pitch on the left
    note_rate: float = 0.8
    press_intensity: float = 0.9
    press_frames: int = 6
    noise: float = 0.0
    pitch_low: int = LOWEST_PITCH
    pitch_high: int = LOWEST_PITCH + N_KEYS - 1

    def __post_init__(self):
        if self.duration * self.fps < WINDOW_LEN:
            raise ValueError(f"video must span at least {WINDOW_LEN} frames")
        if not self.note_rate > 0:
            raise ValueError("note rate must be positive")
        if not 0 < self.press_intensity <= 1:
            raise ValueError("press intensity must lie in (0, 1]")
        if self.press_frames < 1:
            raise ValueError("press_frames must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not LOWEST_PITCH <= self.pitch_low <= self.pitch_high <= LOWEST_PITCH + N_KEYS - 1:
            raise ValueError("pitch range outside the keyboard")
        kb_w = 52 * self.white_key_width
        if kb_w + self.margin_x > self.width or self.margin_y * 2 >= self.height:
            raise ValueError("keyboard does not fit in the image")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fps))

    @property
    def keyboard_box(self) -> BoundingBox:
        return BoundingBox(
            self.margin_x,
            self.margin_y,
            self.margin_x + 52 * self.white_key_width,
            self.height - self.margin_y,
            1.0,
        )


def is_black(pitch: int) -> bool:
    return pitch % 12 in BLACK_PITCH_CLASSES


def key_rects(spec: SynthSpec) -> list[tuple[int, int, int, int]]:
    """(x0, y0, x1, y1) for every key index 0..87, white keys' full rectangles included."""
    box = spec.keyboard_box
    ww = spec.white_key_width
    bw = max(2, int(round(ww * 0.6)))
    black_h = int(round(box.height * spec.black_height_frac))
    rects = []
    white_index = 0
    for k in range(N_KEYS):
        pitch = LOWEST_PITCH + k
        if is_black(pitch):
            boundary = box.x0 + white_index * ww
            x0 = boundary - bw // 2
            rects.append((x0, box.y0, x0 + bw, box.y0 + black_h))
        else:
            x0 = box.x0 + white_index * ww
            rects.append((x0, box.y0, x0 + ww, box.y1))
            white_index += 1
    if spec.descending:
        mirror = 2 * box.x0 + box.width
        rects = [(mirror - x1, y0, mirror - x0, y1) for x0, y0, x1, y1 in rects]
    return rects


def schedule_notes(spec: SynthSpec, rng: np.random.Generator) -> list[NoteEvent]:
    """Poisson onsets with uniform pitch, kept clear of the video edges.

    Onsets land where a full window can see them, and a key is not struck
    again while its previous press is still shown.
    """
    edge = (WINDOW_LEN // 2 + 1) / spec.fps
    t_lo, t_hi = edge, spec.n_frames / spec.fps - edge - spec.press_frames / spec.fps
    notes = []
    busy_until = {}
    t = t_lo
    while True:
        t += rng.exponential(1.0 / spec.note_rate)
        if t > t_hi:
            break
        onset = round(t * TICKS_PER_SECOND) / TICKS_PER_SECOND
        pitch = int(rng.integers(spec.pitch_low, spec.pitch_high + 1))
        start = nearest_frame(onset, spec.fps)
        if busy_until.get(pitch, -1) >= start:
            continue
        busy_until[pitch] = start + spec.press_frames + 1
        notes.append(NoteEvent(onset, pitch))
    notes.sort()
    return notes


def render_base(spec: SynthSpec) -> np.ndarray:
    img = np.empty((spec.height, spec.width, 3))
    img[:] = BACKGROUND_COLOR
    rects = key_rects(spec)
    for k, (x0, y0, x1, y1) in enumerate(rects):
        if not is_black(LOWEST_PITCH + k):
            img[y0:y1, x0:x1] = WHITE_COLOR
            img[y0:y1, x1 - 1] = GAP_COLOR
    for k, (x0, y0, x1, y1) in enumerate(rects):
        if is_black(LOWEST_PITCH + k):
            img[y0:y1, x0:x1] = BLACK_COLOR
    return img


def press_mask(spec: SynthSpec) -> list[np.ndarray]:
    """Per key, the boolean pixel mask darkened while it is pressed (visible area only)."""
    rects = key_rects(spec)
    black_cover = np.zeros((spec.height, spec.width), dtype=bool)
    for k, (x0, y0, x1, y1) in enumerate(rects):
        if is_black(LOWEST_PITCH + k):
            black_cover[y0:y1, x0:x1] = True
    masks = []
    for k, (x0, y0, x1, y1) in enumerate(rects):
        m = np.zeros_like(black_cover)
        m[y0:y1, x0:x1] = True
        if not is_black(LOWEST_PITCH + k):
            m[y0:y1, x1 - 1] = False
            m &= ~black_cover
        masks.append(m)
    return masks


def render_frames(spec: SynthSpec, notes: list[NoteEvent], rng: np.random.Generator | None = None):
    """Yield every frame (H x W x 3 uint8) in order."""
    base = render_base(spec)
    masks = press_mask(spec)
    pressed_at: dict[int, list[int]] = {}
    for note in notes:
        start = nearest_frame(note.onset, spec.fps)
        for f in range(start, start + spec.press_frames):
            pressed_at.setdefault(f, []).append(note.key)
    for f in range(spec.n_frames):
        img = base.copy()
        for k in pressed_at.get(f, ()):
            img[masks[k]] *= 1.0 - spec.press_intensity
        if spec.noise > 0:
            img += rng.normal(0.0, spec.noise, size=img.shape)
        yield np.clip(np.round(img), 0, 255).astype(np.uint8)


def generate(spec: SynthSpec, out_dir) -> tuple[VideoManifest, bytes, Path]:
    """Write frames, manifest, MIDI and detections under ``out_dir``."""
    out_dir = Path(out_dir)
    frame_dir = out_dir / FRAMES_DIR
    frame_dir.mkdir(parents=True, exist_ok=True)
    for stale in frame_dir.glob("frame_*.ppm"):
        stale.unlink()

    rng = np.random.default_rng(spec.seed)
    notes = schedule_notes(spec, rng)
    noise_rng = np.random.default_rng([spec.seed, 1])
    for i, frame in enumerate(render_frames(spec, notes, noise_rng)):
        (frame_dir / (DEFAULT_PATTERN % i)).write_bytes(encode_ppm(frame))

    manifest = VideoManifest(frame_dir, DEFAULT_PATTERN, spec.n_frames, spec.fps, spec.width, spec.height)
    write_manifest(out_dir / MANIFEST_NAME, manifest)
    midi = write_smf(notes)
    (out_dir / MIDI_NAME).write_bytes(midi)
    det_path = out_dir / DETECTIONS_NAME
    write_detections(det_path, {0: [spec.keyboard_box]})
    return manifest, midi, det_path
