"""Coarse carrier frequency offset estimation from the fourth-power spectrum."""

from __future__ import annotations

import numpy as np

from ..errors import LowConfidenceError


def estimate_foe_4thpower(x, sample_rate: float, false_alarm: float = 1e-6) -> float:
    """Frequency offset in Hz of a signal with four-fold rotational symmetry.

    Raising to the fourth power strips QPSK/square-QAM modulation and leaves a
    tone at four times the offset. The peak of ``|FFT(x**4)|**2`` (summed over
    rows when ``x`` is 2-D) is refined by a parabola through the peak bin and
    its neighbours.

    Raises
    ------
    LowConfidenceError
        If the peak-to-mean ratio is below ``ln(n / false_alarm)``. Noise-only
        periodogram bins are exponential, so this is the level that all ``n``
        bins of pure noise stay under with probability ``1 - false_alarm``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=complex))
    n = x.shape[-1]
    x = x / np.sqrt(np.mean(np.abs(x) ** 2, axis=-1, keepdims=True))
    spec = np.sum(np.abs(np.fft.fft(x**4, axis=-1)) ** 2, axis=0)
    k = int(np.argmax(spec))
    ratio = spec[k] / np.mean(spec)
    threshold = np.log(n / false_alarm)
    if ratio < threshold:
        raise LowConfidenceError(
            f"fourth-power spectrum peak is only {ratio:.1f}x the mean level (need {threshold:.1f})"
        )
    # a tone exactly on a bin leaves empty neighbours; the floor keeps the log finite
    a, b, c = np.log(np.maximum(spec[[(k - 1) % n, k, (k + 1) % n]], spec[k] * 1e-30))
    denom = a - 2 * b + c
    delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    f4 = np.fft.fftfreq(n, 1 / sample_rate)[k] + delta * sample_rate / n
    return f4 / 4


def remove_frequency(x: np.ndarray, freq: float, sample_rate: float, t0: float = 0.0) -> np.ndarray:
    t = t0 + np.arange(x.shape[-1]) / sample_rate
    return x * np.exp(-2j * np.pi * freq * t)
