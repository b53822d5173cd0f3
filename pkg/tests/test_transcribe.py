import numpy as np
import pytest
import torch

from pianovt.keyboard_region import BoundingBox
from pianovt.model import ModelConfig, init_params
from pianovt.preprocess import FitMode, PreprocSettings
from pianovt.smf import NoteEvent, write_smf
from pianovt.transcribe import (
    ActivationMatrix,
    TranscriptionError,
    binarize,
    extract_notes,
    gaussian_kernel,
    postprocess,
    predict_frames,
    sliding_predict,
    smooth_time,
)
from pianovt.video_io import read_manifest

from conftest import write_video

TINY = ModelConfig(frames=16, resolution=16, tubelet=2, patch=8, dim=16, layers=1, heads=2, channels=1)
SETTINGS = PreprocSettings(FitMode("stretch"), 16, grayscale=True)


def act_of(values, first_frame=8, fps=30.0):
    return ActivationMatrix(np.asarray(values, dtype=np.float64), first_frame, fps)


def row_matrix(row):
    m = np.zeros((88, len(row)))
    m[0] = row
    return m


def test_kernel_weights():
    k = gaussian_kernel()
    assert len(k) == 33
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    assert k[16] == pytest.approx(0.3989, abs=1e-4)
    assert k[17] == pytest.approx(0.2420, abs=1e-4)


def test_constant_row_unchanged():
    m = np.full((88, 50), 0.37)
    np.testing.assert_allclose(smooth_time(act_of(m)).values, m, atol=1e-12)


def test_single_impulse_suppressed():
    row = np.zeros(60)
    row[30] = 1.0
    sm = smooth_time(act_of(row_matrix(row)))
    assert sm.values[0, 30] == pytest.approx(0.3989, abs=1e-4)
    assert sm.values[0].argmax() == 30
    assert not binarize(sm).any()
    assert postprocess(act_of(row_matrix(row))) == []


def test_double_impulse_survives():
    row = np.zeros(60)
    row[30:32] = 1.0
    sm = smooth_time(act_of(row_matrix(row)))
    assert sm.values[0, 30] == pytest.approx(0.6409, abs=1e-4)
    assert binarize(sm)[0].sum() >= 1
    notes = postprocess(act_of(row_matrix(row), first_frame=8))
    assert len(notes) == 1 and notes[0].pitch == 21


def test_threshold_inclusive():
    assert binarize(np.array([[0.5, 0.4999999, 0.6]])).tolist() == [[True, False, True]]


def test_run_midpoints():
    b = np.zeros((88, 20), dtype=bool)
    b[3, 10:15] = True
    b[7, 10:14] = True
    notes = extract_notes(b, first_frame=0, fps=30.0)
    assert notes == [NoteEvent(11 / 30, 28), NoteEvent(12 / 30, 24)]


def test_single_column_runs_and_edges():
    b = np.zeros((88, 5), dtype=bool)
    b[0, 0] = b[0, 4] = b[87, 2] = True
    notes = extract_notes(b, first_frame=8, fps=10.0)
    assert [(n.onset, n.pitch) for n in notes] == [(0.8, 21), (1.0, 108), (1.2, 21)]


def test_all_zero_matrix():
    assert extract_notes(np.zeros((88, 30), dtype=bool), 8, 30.0) == []


def test_one_onset_per_run(rng):
    for _ in range(20):
        b = rng.random((88, 40)) < 0.3
        runs = sum(int(row[0]) + int(np.sum(row[1:] & ~row[:-1])) for row in b)
        assert len(extract_notes(b, 8, 30.0)) == runs


def test_timing_identity():
    for n in (10, 11, 100, 397):
        b = np.zeros((88, 400), dtype=bool)
        b[40, n - 8 - 2 : n - 8 + 3] = True
        (note,) = extract_notes(b, 8, 30.0)
        assert note.onset == n / 30.0


def test_row_sum_conserved_away_from_edges(rng):
    m = np.zeros((88, 120))
    m[:, 20:100] = rng.random((88, 80)) * 0.9
    sm = smooth_time(act_of(m))
    np.testing.assert_allclose(sm.values.sum(axis=1), m.sum(axis=1), atol=1e-9)


def test_output_sorted(rng):
    b = rng.random((88, 60)) < 0.2
    notes = extract_notes(b, 8, 30.0)
    assert notes == sorted(notes)


def model():
    torch.manual_seed(0)
    return init_params(TINY, 0)


def test_fencepost_single_window(rng):
    act = predict_frames(rng.random((16, 16, 16, 1)).astype(np.float32), model(), 30.0)
    assert act.n_columns == 1 and act.first_frame == 8


def test_fencepost_406_frames(rng):
    frames = rng.random((406, 16, 16, 1)).astype(np.float32)
    act = predict_frames(frames, model(), 30.0)
    assert act.n_columns == 391
    assert act.first_frame + act.n_columns - 1 == 398
    dropped = predict_frames(frames, model(), 30.0, drop_last_window=True)
    assert dropped.n_columns == 390
    np.testing.assert_allclose(dropped.values, act.values[:, :390], rtol=0, atol=1e-6)


def test_window_column_matches_single_forward(rng):
    frames = rng.random((40, 16, 16, 1)).astype(np.float32)
    m = model()
    act = predict_frames(frames, m, 30.0, batch_size=7)
    with torch.no_grad():
        one = m(torch.as_tensor(frames[5:21][None])).numpy()[0]
    np.testing.assert_allclose(act.values[:, 5], one, rtol=1e-5, atol=1e-6)


def test_constant_video_columns_identical():
    frames = np.full((30, 16, 16, 1), 0.4, dtype=np.float32)
    act = predict_frames(frames, model(), 30.0)
    np.testing.assert_array_equal(act.values, np.repeat(act.values[:, :1], act.n_columns, axis=1))


def test_too_short(rng):
    with pytest.raises(TranscriptionError, match="video too short"):
        predict_frames(rng.random((15, 16, 16, 1)).astype(np.float32), model(), 30.0)


def test_sliding_predict_from_disk(tmp_path, rng):
    frames = rng.integers(0, 256, (20, 12, 24, 3), dtype=np.uint8)
    manifest = read_manifest(write_video(tmp_path, frames))
    box = BoundingBox(2, 1, 22, 11)
    act = sliding_predict(manifest, box, model(), SETTINGS)
    assert act.values.shape == (88, 5) and act.fps == 30.0
    assert ((act.values > 0) & (act.values < 1)).all()
    short = read_manifest(write_video(tmp_path / "short", frames[:15]))
    with pytest.raises(TranscriptionError, match="video too short"):
        sliding_predict(short, box, model(), SETTINGS)


def test_pipeline_deterministic(rng):
    frames = rng.random((50, 16, 16, 1)).astype(np.float32)
    runs = []
    for _ in range(2):
        act = predict_frames(frames, model(), 30.0)
        act.values[:, 10:13] = 0.9  # force some onsets through
        runs.append(write_smf(postprocess(act)))
    assert runs[0] == runs[1] and len(runs[0]) > 30


def test_activation_csv(tmp_path):
    act = act_of(np.zeros((88, 2)), first_frame=8)
    act.values[3, 1] = 0.25
    act.to_csv(tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "frame,key,value"
    assert len(lines) == 1 + 2 * 88
    assert "9,3,0.250000" in lines
