import numpy as np
import pytest

from pianovt.video_io import VideoManifest, encode_ppm, write_manifest


def write_video(directory, frames, fps=30, pattern="frame_%06d.ppm"):
    """Write frames (N x H x W x 3 uint8) plus a manifest; returns the manifest path."""
    frame_dir = directory / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        (frame_dir / (pattern % i)).write_bytes(encode_ppm(frame))
    n = len(frames)
    h, w = (frames[0].shape[:2] if n else (8, 8))
    path = directory / "manifest.txt"
    write_manifest(path, VideoManifest(frame_dir, pattern, n, fps, w, h))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion; shown in the terminal summary."""

    def record(name, ok, detail=""):
        _ACCEPTANCE.append((name, bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
