"""Performance metrics: GMI, EVM/SNR/BER and phase-trace cross-correlation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal as sps_signal
from scipy.special import logsumexp

from .errors import DegenerateInputError, InputShapeError
from .sigcore import Constellation, PhaseTrace, bits_to_indices, demap_hard

LN2 = np.log(2.0)


@dataclass
class MetricsReport:
    gmi_bits_per_4d: float
    ngmi: float
    snr_db: float
    evm_db: float
    ber: float
    per_pol: list = field(default_factory=list)


@dataclass
class CorrelationResult:
    lags: np.ndarray
    coefficients: np.ndarray
    lag0_coefficient: float

    def half_width(self) -> float:
        """Positive lag (s) where the coefficient first drops to half its lag-0 value."""
        c, lags = self.coefficients, self.lags
        i0 = int(np.argmin(np.abs(lags)))
        half = 0.5 * self.lag0_coefficient
        for i in range(i0 + 1, len(c)):
            if c[i] <= half:
                frac = (c[i - 1] - half) / (c[i - 1] - c[i])
                return float(lags[i - 1] + frac * (lags[i] - lags[i - 1]))
        return float(lags[-1])


def _as_rows(x) -> list:
    if isinstance(x, (list, tuple)):
        return [np.asarray(r) for r in x]
    arr = np.asarray(x)
    return [arr] if arr.ndim == 1 else list(arr)


def _gain_and_noise(y: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Real gain from ``x`` to ``y`` and the residual noise variance (data-aided)."""
    h = np.real(np.vdot(x, y)) / np.real(np.vdot(x, x))
    var = np.mean(np.abs(y - h * x) ** 2)
    if not np.isfinite(var) or not np.isfinite(h):
        raise InputShapeError("noise variance estimate is not finite")
    return h, var


def _gmi_single(y: np.ndarray, bits: np.ndarray, constellation: Constellation,
                chunk: int = 1 << 14) -> float:
    m = constellation.bits_per_symbol
    idx = bits_to_indices(bits, constellation)
    if len(idx) != len(y):
        raise InputShapeError(f"{len(y)} symbols but {len(idx)} transmitted labels")
    x = constellation.points[idx]
    h, var = _gain_and_noise(y, x)
    # perfectly clean symbols: a tiny floor keeps the LLRs finite
    var = max(var, 1e-12 * max(h * h, 1e-300))
    pts = h * constellation.points
    labels = constellation.bit_labels.astype(bool)
    ones = labels.astype(float)
    b = bits.reshape(-1, m).astype(bool)
    penalty = 0.0
    for s in range(0, len(y), chunk):
        metric = -np.abs(y[s:s + chunk, None] - pts[None, :]) ** 2 / var
        metric -= metric.max(axis=1, keepdims=True)
        e = np.exp(metric)
        s1, s0 = e @ ones, e @ (1.0 - ones)
        # a bit set whose every term underflowed needs the exact log-sum-exp
        lost = np.flatnonzero(np.any((s0 == 0) | (s1 == 0), axis=1))
        with np.errstate(divide="ignore"):
            llr = np.log(s0) - np.log(s1)
        if lost.size:
            sub = metric[lost]
            llr[lost] = np.stack([logsumexp(sub[:, ~labels[:, i]], axis=1)
                                  - logsumexp(sub[:, labels[:, i]], axis=1) for i in range(m)], axis=1)
        sign = np.where(b[s:s + chunk], -1.0, 1.0)
        penalty += np.sum(np.logaddexp(0.0, -sign * llr))
    return max(0.0, m - penalty / LN2 / len(y))


def compute_gmi(rx_symbols, tx_bits, constellation: Constellation,
                min_bits: int = 0) -> float:
    """Generalized mutual information in bits per 4D symbol (both polarizations summed).

    Exact log-sum-exp bit LLRs under a circular Gaussian auxiliary channel whose
    gain and variance are estimated per polarization against the transmitted
    symbols.
    """
    rows, bit_rows = _as_rows(rx_symbols), _as_rows(tx_bits)
    if len(rows) != len(bit_rows):
        raise InputShapeError("need one bit row per symbol row")
    if len({len(r) for r in rows}) > 1:
        raise InputShapeError("polarizations carry different symbol counts")
    n_bits = sum(len(b) for b in bit_rows)
    if n_bits < min_bits:
        raise InputShapeError(f"GMI needs at least {min_bits} bits, got {n_bits}")
    return float(sum(_gmi_single(np.asarray(y, complex), np.asarray(b), constellation)
                     for y, b in zip(rows, bit_rows)))


def compute_evm_snr_ber(rx_symbols, tx_bits, constellation: Constellation) -> dict:
    """EVM and SNR against the known symbols, BER by hard decision.

    A gain-only (real) scaling is fitted first. Error-free input gives
    ``evm_db = -inf`` and ``snr_db = inf``.
    """
    rows, bit_rows = _as_rows(rx_symbols), _as_rows(tx_bits)
    err_pow = sig_pow = 0.0
    n_err = n_bits = 0
    per_pol = []
    for y, bits in zip(rows, bit_rows):
        y = np.asarray(y, complex)
        bits = np.asarray(bits)
        x = constellation.points[bits_to_indices(bits, constellation)]
        h, var = _gain_and_noise(y, x)
        e = np.mean(np.abs(y / h - x) ** 2)
        s = np.mean(np.abs(x) ** 2)
        errors = int(np.count_nonzero(demap_hard(y / h, constellation) != bits))
        per_pol.append({"evm_db": _db(e / s), "ber": errors / len(bits)})
        err_pow += e
        sig_pow += s
        n_err += errors
        n_bits += len(bits)
    evm = _db(err_pow / sig_pow)
    return {"evm_db": evm, "snr_db": -evm, "ber": n_err / n_bits, "per_pol": per_pol}


def _db(x: float) -> float:
    return -np.inf if x <= 0 else float(10 * np.log10(x))


def metrics_report(rx_symbols, tx_bits, constellation: Constellation) -> MetricsReport:
    gmi = compute_gmi(rx_symbols, tx_bits, constellation)
    rows = _as_rows(rx_symbols)
    q = compute_evm_snr_ber(rx_symbols, tx_bits, constellation)
    ngmi = gmi / (len(rows) * constellation.bits_per_symbol)
    return MetricsReport(gmi * 2 / len(rows), ngmi, q["snr_db"], q["evm_db"], q["ber"], q["per_pol"])


def detrend(values: np.ndarray) -> np.ndarray:
    """Remove the least-squares straight line."""
    t = np.arange(len(values), dtype=float)
    t -= t.mean()
    v = values - values.mean()
    return v - t * (np.dot(t, v) / np.dot(t, t))


def phase_crosscorr(a: PhaseTrace, b: PhaseTrace, max_lag: int,
                    remove_trend: bool = True) -> CorrelationResult:
    """Normalized cross-correlation of two phase traces for lags ``-max_lag..max_lag``.

    Coefficient at lag ``L`` pairs ``a[k]`` with ``b[k + L]``; the biased
    normalization by the full-length variances keeps every coefficient in [-1, 1].
    """
    if len(a) != len(b) or a.sample_rate != b.sample_rate:
        raise InputShapeError("phase traces must share one sample grid")
    x = detrend(a.values) if remove_trend else a.values - a.values.mean()
    y = detrend(b.values) if remove_trend else b.values - b.values.mean()
    vx, vy = np.dot(x, x), np.dot(y, y)
    # detrending a pure ramp leaves only rounding residue
    scale = max(np.sum((a.values - a.values.mean()) ** 2), np.sum((b.values - b.values.mean()) ** 2))
    if min(vx, vy) <= 1e-20 * scale or min(vx, vy) == 0:
        raise DegenerateInputError("phase trace has zero variance")
    n = len(x)
    max_lag = min(max_lag, n - 1)
    full = sps_signal.correlate(y, x, mode="full", method="fft")
    mid = n - 1
    raw = full[mid - max_lag:mid + max_lag + 1]
    denom = np.sqrt(vx * vy)
    coef = np.clip(raw / denom, -1.0, 1.0)
    lag0 = float(np.clip(np.dot(x, y) / denom, -1.0, 1.0))
    coef[max_lag] = lag0
    lags = np.arange(-max_lag, max_lag + 1) / a.sample_rate
    return CorrelationResult(lags, coef, lag0)


def phase_mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean-square phase error modulo the quarter-turn symmetry, after removing a constant offset."""
    d = np.asarray(estimate) - np.asarray(truth)
    offset = np.angle(np.mean(np.exp(4j * d))) / 4
    w = np.mod(d - offset + np.pi / 4, np.pi / 2) - np.pi / 4
    return float(np.mean(w**2))
