"""Receiver front-end DSP: I/Q orthogonalization, matched filtering, skew removal."""

from __future__ import annotations

import numpy as np
from scipy import signal as sps_signal

from ..errors import DegenerateInputError
from ..sigcore import Frame, rrc_spectrum, rrc_taps


def gram_schmidt(frame: Frame) -> Frame:
    """Orthonormalize I and Q of every polarization.

    I is scaled to unit power, the part of Q correlated with I is removed and
    the remainder scaled to unit power.
    """
    out = []
    for p in frame.pols:
        i, q = p.real, p.imag
        pi = np.mean(i * i)
        if not pi > 0:
            raise DegenerateInputError("in-phase component has zero power")
        i = i / np.sqrt(pi)
        q = q - np.mean(q * i) * i
        pq = np.mean(q * q)
        if not pq > 0:
            raise DegenerateInputError("quadrature component has zero power after projection")
        out.append(i + 1j * q / np.sqrt(pq))
    return frame.replace(*out)


def normalize_power(frame: Frame, power: float = 1.0) -> Frame:
    return frame.replace(*[p * np.sqrt(power / np.mean(np.abs(p) ** 2)) for p in frame.pols])


def _is_integer(r: float) -> bool:
    return abs(r - round(r)) < 1e-9


def matched_filter_downsample(frame: Frame, symbol_rate: float, rolloff: float,
                              sps_out: int = 2, span: int = 64) -> Frame:
    """RRC matched filter followed by resampling to ``sps_out`` samples per symbol.

    At an integer input oversampling the filter is the same unit-energy FIR the
    transmitter uses, so a noiseless back-to-back link returns the transmitted
    symbols at the symbol instants. Otherwise the ideal root-raised-cosine
    response is applied in the frequency domain (scaled to the same gain).
    """
    fs = frame.sample_rate
    ratio = fs / symbol_rate
    n = len(frame)
    out = []
    for p in frame.pols:
        if _is_integer(ratio) and round(ratio) >= 2:
            r = int(round(ratio))
            h = rrc_taps(rolloff, r, span)
            d = (len(h) - 1) // 2
            y = sps_signal.fftconvolve(p, h)[d:d + n]
        else:
            f = np.fft.fftfreq(n, 1 / fs)
            y = np.fft.ifft(np.fft.fft(p) * rrc_spectrum(f, symbol_rate, rolloff) * np.sqrt(ratio))
        out.append(y)
    if _is_integer(ratio) and round(ratio) % sps_out == 0:
        step = int(round(ratio)) // sps_out
        out = [y[::step] for y in out]
        n_out = len(out[0])
    else:
        n_out = int(round(n * sps_out / ratio))
        out = [sps_signal.resample(y, n_out) for y in out]
    return frame.replace(*out, sample_rate=sps_out * symbol_rate)


def chunked_xcorr(x: np.ndarray, ref: np.ndarray, lags: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Non-coherent correlation magnitude of ``x`` against ``ref`` at integer lags.

    Coherent sums run over ``chunk`` samples only and their magnitudes are added,
    so residual carrier rotation does not wash out the peak. Positive lag means
    ``x`` is delayed relative to ``ref``.
    """
    n_ref = len(ref) - len(ref) % chunk
    ref = ref[:n_ref]
    out = np.zeros(len(lags))
    for i, lag in enumerate(lags):
        lo = int(lag)
        if lo < 0 or lo + n_ref > len(x):
            seg = np.zeros(n_ref, dtype=complex)
            a, b = max(lo, 0), min(lo + n_ref, len(x))
            if b > a:
                seg[a - lo:b - lo] = x[a:b]
        else:
            seg = x[lo:lo + n_ref]
        prod = (seg * np.conj(ref)).reshape(-1, chunk).sum(axis=1)
        out[i] = np.sum(np.abs(prod))
    return out


def estimate_skew(frame: Frame, reference: Frame, max_lag: int = 32, chunk: int = 32) -> float:
    """Delay of ``frame`` against a known preamble waveform, in seconds.

    Integer-lag peak of the chunked correlation, refined by a parabola.
    """
    lags = np.arange(-max_lag, max_lag + 1)
    metric = sum(chunked_xcorr(x, r, lags, chunk) for x, r in zip(frame.pols, reference.pols))
    k = int(np.argmax(metric))
    delta = 0.0
    if 0 < k < len(lags) - 1:
        a, b, c = metric[k - 1:k + 2]
        denom = a - 2 * b + c
        if denom != 0:
            delta = 0.5 * (a - c) / denom
    return (lags[k] + delta) / frame.sample_rate


def fractional_delay(frame: Frame, delay: float) -> Frame:
    """Delay every polarization by ``delay`` seconds with a frequency-domain phase ramp."""
    if delay == 0:
        return frame
    f = np.fft.fftfreq(len(frame), 1 / frame.sample_rate)
    ramp = np.exp(-2j * np.pi * f * delay)
    return frame.replace(*[np.fft.ifft(np.fft.fft(p) * ramp) for p in frame.pols])


def compensate_skew(frame: Frame, skew: float) -> Frame:
    return fractional_delay(frame, -skew)
