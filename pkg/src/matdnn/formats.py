"""Binary and CSV file formats: MATF features, MATM token models, MATN networks."""

from __future__ import annotations

import csv
import io
import os
import struct
import wave
from pathlib import Path

import numpy as np

from .features import FeatureSequence, Waveform

MATF_MAGIC = b"MATF"
MATM_MAGIC = b"MATM"
MATN_MAGIC = b"MATN"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.name}: truncated file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else list(vals)

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self, count: int, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).astype(np.float64)

    def magic(self, expected: bytes):
        got = self.take(4)
        if got != expected:
            raise FormatError(f"{self.name}: bad magic {got!r}, expected {expected!r}")
        version = self.u32()
        if version != FORMAT_VERSION:
            raise FormatError(f"{self.name}: unsupported version {version}")

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.name}: {len(self.data) - self.pos} trailing bytes")


def _text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


# -- MATF ---------------------------------------------------------------------


def dumps_matf(f: FeatureSequence) -> bytes:
    T, D = f.frames.shape
    header = MATF_MAGIC + struct.pack("<I", FORMAT_VERSION)
    header += _text(f.utterance_id) + _text(f.speaker_id)
    header += struct.pack("<III", T, D, int(f.frame_shift))
    return header + np.ascontiguousarray(f.frames, dtype="<f4").tobytes()


def loads_matf(data: bytes, name: str = "<matf>", feature_kind: str = "mfcc") -> FeatureSequence:
    r = _Reader(data, name)
    r.magic(MATF_MAGIC)
    uid, spk = r.text(), r.text()
    T, D, shift = r.u32(3)
    frames = r.array(T * D, "<f4").reshape(T, D)
    r.done()
    return FeatureSequence(uid, spk, frames, frame_shift=shift, feature_kind=feature_kind)


def write_matf(path, f: FeatureSequence):
    atomic_write_bytes(path, dumps_matf(f))


def read_matf(path, feature_kind: str = "mfcc") -> FeatureSequence:
    return loads_matf(Path(path).read_bytes(), str(path), feature_kind)


def write_feature_dir(directory, corpus):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for f in corpus:
        write_matf(directory / f"{f.utterance_id}.matf", f)


def read_feature_dir(directory, feature_kind: str = "mfcc"):
    """All *.matf files in a directory, sorted by file name."""
    paths = sorted(Path(directory).glob("*.matf"))
    if not paths:
        raise FileNotFoundError(f"no .matf files in {directory}")
    return [read_matf(p, feature_kind) for p in paths]


# -- WAV ----------------------------------------------------------------------


def read_wav(path, utterance_id: str | None = None, speaker_id: str = "") -> Waveform:
    """16-bit mono PCM WAV, scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise FormatError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(utterance_id or Path(path).stem, samples, rate, speaker_id)


def write_wav(path, w: Waveform):
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(w.sample_rate)
        out.writeframes(pcm.tobytes())


# -- CSV helpers --------------------------------------------------------------


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def read_csv(path, header):
    """Rows of a CSV file as lists of strings; checks the header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != list(header):
        raise FormatError(f"{path}: expected header {','.join(header)}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
    return rows[1:]


def fmt_float(x: float) -> str:
    """Shortest round-trip repr, so reports are byte-stable."""
    return repr(float(x))


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
