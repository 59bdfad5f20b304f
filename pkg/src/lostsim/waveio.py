"""Binary waveform files.

Layout, little-endian: 4-byte magic ``LSTW``, u32 version (1), f64 sample
rate, f64 t0, u64 sample count, then interleaved float32 I/Q pairs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .signal import Waveform

MAGIC = b"LSTW"
VERSION = 1
_HEADER = struct.Struct("<4sIddQ")
_IQ = np.dtype("<f4")


class WaveformFormatError(ValueError):
    pass


def encode_waveform(w: Waveform) -> bytes:
    iq = np.empty(2 * len(w), dtype=_IQ)
    s = w.samples.astype(np.complex64)
    iq[0::2] = s.real
    iq[1::2] = s.imag
    return _HEADER.pack(MAGIC, VERSION, float(w.sample_rate), float(w.t0), len(w)) + iq.tobytes()


def decode_waveform(data: bytes) -> Waveform:
    if len(data) < _HEADER.size:
        raise WaveformFormatError("file shorter than the header")
    magic, version, fs, t0, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WaveformFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise WaveformFormatError(f"unsupported version {version}")
    payload = data[_HEADER.size:]
    if len(payload) != 8 * n:
        raise WaveformFormatError(f"payload holds {len(payload)} bytes, header promises {8 * n}")
    if not fs > 0:
        raise WaveformFormatError("sample rate must be positive")
    # interleaved little-endian float32 I/Q is exactly the '<c8' layout
    samples = np.frombuffer(payload, dtype="<c8").astype(np.complex64)
    return Waveform(fs, t0, samples)


def write_waveform(path, w: Waveform) -> None:
    Path(path).write_bytes(encode_waveform(w))


def read_waveform(path) -> Waveform:
    return decode_waveform(Path(path).read_bytes())
