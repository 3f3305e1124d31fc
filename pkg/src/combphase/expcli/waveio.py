"""Binary waveform dumps.

Layout: a 64-byte little-endian header (magic, format version, polarization
count, sample count, sample rate, start time, zero padding), then float32
interleaved I,Q samples of each polarization, polarizations concatenated.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import WaveformFormatError
from ..sigcore import Frame

MAGIC = b"CPWF"
VERSION = 1
HEADER = struct.Struct("<4sHHQdd")
HEADER_SIZE = 64


def export_waveform(frame: Frame, path) -> None:
    """Write ``frame`` at float32 precision."""
    head = HEADER.pack(MAGIC, VERSION, frame.npol, len(frame), frame.sample_rate, frame.t0)
    head = head.ljust(HEADER_SIZE, b"\0")
    body = []
    for p in frame.pols:
        iq = np.empty(2 * len(p), dtype="<f4")
        iq[0::2] = p.real
        iq[1::2] = p.imag
        body.append(iq.tobytes())
    Path(path).write_bytes(head + b"".join(body))


def import_waveform(path) -> Frame:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise WaveformFormatError(
            f"header truncated at byte offset {len(raw)} (need {HEADER_SIZE} bytes)")
    magic, version, npol, n, rate, t0 = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise WaveformFormatError(f"bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise WaveformFormatError(f"unsupported version {version} at byte offset 4")
    if npol not in (1, 2):
        raise WaveformFormatError(f"polarization count {npol} at byte offset 6 is not 1 or 2")
    expected = HEADER_SIZE + npol * n * 8
    if len(raw) < expected:
        raise WaveformFormatError(
            f"sample data truncated at byte offset {len(raw)} (expected {expected} bytes)")
    if len(raw) > expected:
        raise WaveformFormatError(f"unexpected trailing data from byte offset {expected}")
    iq = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).astype(np.float64)
    pols = [iq[2 * k * n:2 * (k + 1) * n] for k in range(npol)]
    samples = [p[0::2] + 1j * p[1::2] for p in pols]
    return Frame(samples[0], samples[1] if npol == 2 else None, rate, t0)
