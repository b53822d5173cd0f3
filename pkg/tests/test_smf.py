import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pianovt.smf import MidiError, NoteEvent, parse_smf, read_vlq, write_smf, write_vlq


def smf(tracks, division=480, fmt=None):
    fmt = (0 if len(tracks) == 1 else 1) if fmt is None else fmt
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), division)
    for body in tracks:
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return out


TEMPO_120 = b"\x00\xff\x51\x03\x07\xa1\x20"
EOT = b"\x00\xff\x2f\x00"


def test_single_note_at_tick_480():
    # delta 480 = 0x83 0x60
    body = TEMPO_120 + b"\x83\x60\x90\x3c\x40" + b"\x81\x70\x80\x3c\x00" + EOT
    assert parse_smf(smf([body])) == [NoteEvent(0.5, 60)]


def test_empty_track():
    assert parse_smf(smf([EOT])) == []


def test_velocity_zero_is_not_an_onset():
    # running status: second and third events reuse 0x90
    body = b"\x00\x90\x3c\x40" + b"\x60\x3c\x00" + b"\x60\x3e\x50" + EOT
    notes = parse_smf(smf([body]))
    assert [n.pitch for n in notes] == [60, 62]
    assert notes[1].onset == pytest.approx(2 * 96 / 480 * 0.5)


def test_default_tempo_is_120_bpm():
    body = b"\x83\x60\x90\x3c\x40" + EOT
    assert parse_smf(smf([body]))[0].onset == pytest.approx(0.5)


def test_format1_tempo_map():
    # tempo doubles speed at tick 960: 250000 us per quarter note
    tempo_track = TEMPO_120 + b"\x87\x40\xff\x51\x03\x03\xd0\x90" + EOT
    notes_track = b"\x87\x40\x90\x3c\x40" + b"\x87\x40\x90\x3e\x40" + EOT
    notes = parse_smf(smf([tempo_track, notes_track]))
    assert notes[0] == NoteEvent(1.0, 60)
    assert notes[1].onset == pytest.approx(1.0 + 960 / 480 * 0.25)


def test_meta_and_sysex_and_other_channel_events_are_skipped():
    body = (
        b"\x00\xff\x03\x04name"  # track name
        + b"\x00\xf0\x03\x7e\x7f\xf7"  # sysex
        + b"\x00\xc0\x05"  # program change, one data byte
        + b"\x00\xb0\x40\x7f"  # sustain pedal
        + b"\x00\x91\x40\x40"  # note-on on channel 2
        + EOT
    )
    assert parse_smf(smf([body])) == [NoteEvent(0.0, 64)]


def test_out_of_range_pitches_are_dropped_with_warning():
    body = b"\x00\x90\x10\x40" + b"\x00\x90\x3c\x40" + b"\x00\x90\x7f\x40" + EOT
    with pytest.warns(UserWarning, match="dropped 2"):
        assert parse_smf(smf([body])) == [NoteEvent(0.0, 60)]


@pytest.mark.parametrize(
    "data, message",
    [
        (b"RIFF" + bytes(20), "MThd"),
        (smf([b"\x00\x90\x3c\x40" + EOT], division=0xE728), "SMPTE"),
        (smf([b"\x83"]), "truncated variable-length"),
        (smf([b"\x00\x3c\x40" + EOT]), "running status"),
        (smf([EOT], fmt=2), "format"),
        (smf([b"\x00\x90\x3c"]), "truncated channel"),
    ],
)
def test_parse_errors(data, message):
    with pytest.raises(MidiError, match=message):
        parse_smf(data)


@pytest.mark.parametrize("value, encoded", [(0, b"\x00"), (0x7F, b"\x7f"), (0x80, b"\x81\x00"), (480, b"\x83\x60"), (0x0FFFFFFF, b"\xff\xff\xff\x7f")])
def test_vlq_known_values(value, encoded):
    assert write_vlq(value) == encoded
    assert read_vlq(encoded, 0) == (value, len(encoded))


def test_write_empty_list():
    data = write_smf([])
    assert data[:4] == b"MThd"
    assert struct.unpack(">HHH", data[8:14]) == (0, 1, 480)
    assert parse_smf(data) == []


def test_write_single_note_round_trip():
    notes = parse_smf(write_smf([NoteEvent(1.0, 60)]))
    assert len(notes) == 1
    assert notes[0].pitch == 60
    assert abs(notes[0].onset - 1.0) <= 1.05e-3


def test_simultaneous_notes_order_by_pitch():
    notes = parse_smf(write_smf([NoteEvent(0.5, 64), NoteEvent(0.5, 60)]))
    assert [n.pitch for n in notes] == [60, 64]


def test_writer_is_deterministic_and_sorts_input():
    a = [NoteEvent(2.0, 70), NoteEvent(0.25, 30), NoteEvent(1.0, 50)]
    assert write_smf(a) == write_smf(sorted(a)) == write_smf(list(reversed(a)))


def test_write_rejects_out_of_range_pitch():
    class Loose:
        onset, pitch = 0.0, 120

        def __lt__(self, other):
            return False

    with pytest.raises(MidiError):
        write_smf([Loose()])
    with pytest.raises(ValueError):
        NoteEvent(0.0, 20)


def test_repeated_note_within_note_length():
    notes = [NoteEvent(0.0, 60), NoteEvent(0.05, 60), NoteEvent(0.1, 60)]
    back = parse_smf(write_smf(notes))
    assert [round(n.onset, 3) for n in back] == [0.0, 0.05, 0.1]


note_lists = st.lists(
    st.builds(NoteEvent, st.floats(0, 600, allow_nan=False), st.integers(21, 108)), max_size=40
)


@settings(max_examples=200, deadline=None)
@given(note_lists)
def test_round_trip_property(notes):
    back = parse_smf(write_smf(notes))
    expected = sorted(notes, key=lambda n: (round(n.onset * 960), n.pitch))
    assert [n.pitch for n in back] == [n.pitch for n in expected]
    assert np.all(np.abs(np.array([n.onset for n in back]) - np.array([n.onset for n in expected])) <= 1.05e-3)
