import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pianovt.smf import NoteEvent
from pianovt.targets import (
    FrameOnsetMap,
    cull_empty,
    nearest_frame,
    onsets_to_frames,
    window_label,
    window_labels,
)


def marks(onset_map, pitch):
    return onset_map.marks[pitch - 21].tolist()


def brute_label(mark_set, s):
    """Label straight from the rule: both central frames marked -> 1, one -> 0.5."""
    a, b = (s + 7) in mark_set, (s + 8) in mark_set
    return 1.0 if a and b else 0.5 if a or b else 0.0


def test_onset_one_second():
    m = onsets_to_frames([NoteEvent(1.0, 60)], 30)
    assert marks(m, 60) == [29, 30, 31]


def test_onset_at_zero_is_clipped():
    assert marks(onsets_to_frames([NoteEvent(0.0, 60)], 30), 60) == [0, 1]


def test_half_frame_rounds_up():
    assert nearest_frame(29.5 / 30, 30) == 30
    assert nearest_frame(29.49 / 30, 30) == 29
    assert marks(onsets_to_frames([NoteEvent(29.5 / 30, 60)]), 60) == [29, 30, 31]


def test_fps_must_be_positive():
    with pytest.raises(ValueError):
        onsets_to_frames([], 0)


def test_isolated_onset_at_frame_100():
    m = onsets_to_frames([NoteEvent(100 / 30, 40)], 30)
    k = 40 - 21
    labels = {s: window_label(m, s)[k] for s in range(80, 110)}
    assert {s for s, v in labels.items() if v == 1.0} == {92, 93}
    assert {s for s, v in labels.items() if v == 0.5} == {91, 94}
    assert sum(labels.values()) == 3.0
    other = np.delete(np.array([window_label(m, s) for s in range(80, 110)]), k, axis=1)
    assert not other.any()


def test_no_onsets_all_zero():
    m = onsets_to_frames([], 30)
    assert not any(window_label(m, s).any() for s in range(0, 50))
    assert not window_labels(m, 100).any()


def test_two_onsets_two_frames_apart_merge():
    m = onsets_to_frames([NoteEvent(100 / 30, 60), NoteEvent(102 / 30, 60)], 30)
    merged = set(marks(m, 60))
    assert merged == {99, 100, 101, 102, 103}
    for s in range(80, 110):
        assert window_label(m, s)[39] == brute_label(merged, s)


def test_dense_labels_match_single_window_labels(rng):
    notes = [NoteEvent(float(t), int(p)) for t, p in zip(rng.uniform(0, 10, 40), rng.integers(21, 109, 40))]
    m = onsets_to_frames(notes, 30)
    dense = window_labels(m, 300)
    assert dense.shape == (285, 88)
    for s in range(0, 285, 7):
        assert np.array_equal(dense[s], window_label(m, s))


@settings(max_examples=100)
@given(n=st.integers(9, 5000), pitch=st.integers(21, 108))
def test_isolated_onset_sums_to_three(n, pitch):
    m = onsets_to_frames([NoteEvent(n / 30, pitch)], 30)
    values = [window_label(m, s)[pitch - 21] for s in range(n - 20, n + 20)]
    assert sorted(v for v in values if v) == [0.5, 0.5, 1.0, 1.0]


@settings(max_examples=100)
@given(frames=st.lists(st.integers(20, 200), min_size=1, max_size=6), delta=st.integers(0, 50), s=st.integers(0, 220))
def test_translation_equivariance(frames, delta, s):
    a = onsets_to_frames([NoteEvent(f / 30, 60) for f in frames], 30)
    b = onsets_to_frames([NoteEvent((f + delta) / 30, 60) for f in frames], 30)
    assert np.array_equal(window_label(a, s), window_label(b, s + delta))


def _samples(n_empty, n_pos):
    zero, pos = np.zeros(88), np.zeros(88)
    pos[3] = 0.5
    return [(i, zero) for i in range(n_empty)] + [(n_empty + i, pos) for i in range(n_pos)]


def test_cull_keeps_all_positive(rng):
    samples = _samples(0, 50)
    assert cull_empty(samples, rng) == samples


def test_cull_binomial_bound():
    kept = cull_empty(_samples(10_000, 0), np.random.default_rng(0), 0.05)
    assert 400 <= len(kept) <= 600


def test_cull_zero_keep_fraction(rng):
    kept = cull_empty(_samples(200, 30), rng, 0.0)
    assert len(kept) == 30 and all(label.any() for _, label in kept)


def test_cull_is_seeded():
    a = cull_empty(_samples(1000, 10), np.random.default_rng(9))
    b = cull_empty(_samples(1000, 10), np.random.default_rng(9))
    assert [w for w, _ in a] == [w for w, _ in b]


def test_cull_rejects_bad_fraction(rng):
    with pytest.raises(ValueError):
        cull_empty([], rng, 1.5)


def test_frame_onset_map_dense():
    m = FrameOnsetMap(30.0)
    m.marks[0] = np.array([2, 3])
    d = m.dense()
    assert d.shape == (88, 4) and d[0, 2] and d[0, 3] and d.sum() == 2
