"""Minimal Standard MIDI File reader/writer for onset-only piano transcriptions."""

from __future__ import annotations

import bisect
import struct
import warnings
from dataclasses import dataclass

LOWEST_PITCH = 21
HIGHEST_PITCH = 108
N_KEYS = HIGHEST_PITCH - LOWEST_PITCH + 1

WRITE_DIVISION = 480
WRITE_TEMPO = 500_000  # microseconds per quarter note
WRITE_VELOCITY = 64
WRITE_NOTE_LENGTH = 0.1  # seconds; the transcription has no offsets

# data bytes following each channel-voice status nibble
_CHANNEL_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


class MidiError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: float
    pitch: int

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError(f"negative onset {self.onset}")
        if not LOWEST_PITCH <= self.pitch <= HIGHEST_PITCH:
            raise ValueError(f"pitch {self.pitch} outside piano range")

    @property
    def key(self) -> int:
        return self.pitch - LOWEST_PITCH


def read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for i in range(4):
        if pos >= len(data):
            raise MidiError("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiError("variable-length quantity longer than 4 bytes")


def write_vlq(value: int) -> bytes:
    if not 0 <= value <= 0x0FFFFFFF:
        raise MidiError(f"value {value} not representable as a variable-length quantity")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _chunks(data: bytes):
    pos = 0
    while pos + 8 <= len(data):
        kind = data[pos : pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + length]
        if len(body) != length:
            raise MidiError(f"truncated {kind!r} chunk")
        yield kind, body
        pos += 8 + length


def _parse_track(body: bytes):
    """Yield (absolute tick, kind, payload) with kind in {'on', 'tempo'}."""
    pos, tick, status = 0, 0, None
    while pos < len(body):
        delta, pos = read_vlq(body, pos)
        tick += delta
        if pos >= len(body):
            raise MidiError("truncated track event")
        byte = body[pos]
        if byte == 0xFF:
            if pos + 1 >= len(body):
                raise MidiError("truncated meta event")
            meta = body[pos + 1]
            length, pos = read_vlq(body, pos + 2)
            payload = body[pos : pos + length]
            if len(payload) != length:
                raise MidiError("truncated meta event")
            pos += length
            status = None
            if meta == 0x51:
                if length != 3:
                    raise MidiError("bad tempo event")
                yield tick, "tempo", int.from_bytes(payload, "big")
            elif meta == 0x2F:
                return
            continue
        if byte in (0xF0, 0xF7):
            length, pos = read_vlq(body, pos + 1)
            pos += length
            if pos > len(body):
                raise MidiError("truncated sysex event")
            status = None
            continue
        if byte & 0x80:
            status = byte
            pos += 1
        elif status is None:
            raise MidiError("data byte without running status")
        n = _CHANNEL_DATA_LEN.get(status >> 4)
        if n is None:
            raise MidiError(f"unsupported status byte 0x{status:02x}")
        args = body[pos : pos + n]
        if len(args) != n:
            raise MidiError("truncated channel event")
        pos += n
        if status >> 4 == 0x9 and args[1] > 0:
            yield tick, "on", args[0]


def parse_smf(data: bytes) -> list[NoteEvent]:
    """Note onsets (velocity > 0 note-ons) of a format 0/1 file, in seconds.

    The tempo map is merged across tracks. Pitches outside the 88-key range
    are dropped with a warning.
    """
    chunks = list(_chunks(data))
    if not chunks or chunks[0][0] != b"MThd":
        raise MidiError("not a MIDI file: 'MThd' missing")
    header = chunks[0][1]
    if len(header) < 6:
        raise MidiError("truncated header chunk")
    fmt, ntracks, division = struct.unpack(">HHH", header[:6])
    if fmt not in (0, 1):
        raise MidiError(f"unsupported SMF format {fmt}")
    if division & 0x8000:
        raise MidiError("SMPTE time division is unsupported")
    if division == 0:
        raise MidiError("zero ticks per quarter note")

    tempos: list[tuple[int, int]] = []
    ons: list[tuple[int, int]] = []
    for kind, body in chunks[1:]:
        if kind != b"MTrk":
            continue
        for tick, ev, value in _parse_track(body):
            (tempos if ev == "tempo" else ons).append((tick, value))

    tempos.sort(key=lambda tv: tv[0])
    # piecewise-linear tick -> seconds map
    seg_ticks, seg_secs, seg_tempo = [0], [0.0], [WRITE_TEMPO]
    for tick, tempo in tempos:
        secs = seg_secs[-1] + (tick - seg_ticks[-1]) * seg_tempo[-1] / (1e6 * division)
        if tick == seg_ticks[-1]:
            seg_tempo[-1] = tempo
        else:
            seg_ticks.append(tick)
            seg_secs.append(secs)
            seg_tempo.append(tempo)

    notes, dropped = [], 0
    for tick, pitch in ons:
        if not LOWEST_PITCH <= pitch <= HIGHEST_PITCH:
            dropped += 1
            continue
        i = bisect.bisect_right(seg_ticks, tick) - 1
        secs = seg_secs[i] + (tick - seg_ticks[i]) * seg_tempo[i] / (1e6 * division)
        notes.append(NoteEvent(secs, pitch))
    if dropped:
        warnings.warn(f"dropped {dropped} notes outside the piano range", stacklevel=2)
    notes.sort()
    return notes


def _seconds_to_ticks(seconds: float) -> int:
    return int(round(seconds * 1e6 * WRITE_DIVISION / WRITE_TEMPO))


def write_smf(notes) -> bytes:
    """Encode onsets as a format-0 file (480 ticks/qn, 120 bpm).

    Every note sounds for a fixed 0.1 s at velocity 64. Output is
    byte-identical for equal note lists.
    """
    events = []  # (tick, order, pitch, status) ; note-offs sort before note-ons on a tick
    for note in sorted(notes):
        if not LOWEST_PITCH <= note.pitch <= HIGHEST_PITCH:
            raise MidiError(f"pitch {note.pitch} outside piano range")
        on = _seconds_to_ticks(note.onset)
        off = _seconds_to_ticks(note.onset + WRITE_NOTE_LENGTH)
        events.append((on, 1, note.pitch, 0x90))
        events.append((off, 0, note.pitch, 0x80))
    events.sort()

    track = bytearray()
    track += b"\x00\xff\x51\x03" + WRITE_TEMPO.to_bytes(3, "big")
    last = 0
    for tick, _, pitch, status in events:
        velocity = WRITE_VELOCITY if status == 0x90 else 0
        track += write_vlq(tick - last) + bytes((status, pitch, velocity))
        last = tick
    track += b"\x00\xff\x2f\x00"

    header = struct.pack(">4sIHHH", b"MThd", 6, 0, 1, WRITE_DIVISION)
    return header + struct.pack(">4sI", b"MTrk", len(track)) + bytes(track)
