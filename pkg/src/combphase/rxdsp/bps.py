"""Blind phase search over one or several streams that share a carrier phase."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, InputShapeError
from ..sigcore import Constellation, PhaseTrace

QUARTER = np.pi / 2


@dataclass
class OpCounter:
    """Counts distance-metric evaluations (one per symbol, stream and test angle)."""

    bps_evals: dict = field(default_factory=dict)

    def add(self, key, n: int) -> None:
        self.bps_evals[key] = self.bps_evals.get(key, 0) + int(n)

    def total(self) -> int:
        return sum(self.bps_evals.values())

    def get(self, key) -> int:
        return self.bps_evals.get(key, 0)


def phase_grid(n_angles: int) -> np.ndarray:
    """``n_angles`` equally spaced angles on [-pi/4, pi/4); index ``n/2`` is zero."""
    if n_angles < 2:
        raise ConfigError(f"BPS needs at least 2 test angles, got {n_angles}")
    return -np.pi / 4 + QUARTER * np.arange(n_angles) / n_angles


def window_halves(window: int) -> tuple[int, int]:
    """Symbols before and after the current one covered by a centered window."""
    return (window - 1) // 2, window // 2


def distance_metric(streams: np.ndarray, constellation: Constellation,
                    angles: np.ndarray) -> np.ndarray:
    """Squared distance to the nearest point after each test rotation, summed over streams.

    ``streams`` has shape ``(G, N)``; the result has shape ``(B, N)``.
    """
    r = np.asarray(streams)[None] * np.exp(-1j * np.asarray(angles))[:, None, None]
    lv = constellation.levels
    step, top = lv[1] - lv[0], len(lv) - 1

    # per-axis rounding is the nearest-point decision on a square grid
    def axis_error(v):
        return v - (lv[0] + step * np.clip(np.rint((v - lv[0]) / step), 0, top))

    return np.sum(axis_error(r.real) ** 2 + axis_error(r.imag) ** 2, axis=1)


def sliding_sum(x: np.ndarray, window: int) -> np.ndarray:
    """Centered running sum along the last axis, truncated at the edges."""
    n = x.shape[-1]
    before, after = window_halves(window)
    c = np.zeros(x.shape[:-1] + (n + 1,))
    np.cumsum(x, axis=-1, out=c[..., 1:])
    k = np.arange(n)
    hi = np.minimum(k + after + 1, n)
    lo = np.maximum(k - before, 0)
    return c[..., hi] - c[..., lo]


def bps_wrapped(streams: np.ndarray, constellation: Constellation, window: int,
                n_angles: int, counter: OpCounter | None = None, key="bps") -> np.ndarray:
    """Per-symbol BPS estimate in [-pi/4, pi/4), before unwrapping."""
    streams = np.atleast_2d(np.asarray(streams))
    if window < 1:
        raise ConfigError(f"BPS window must be >= 1, got {window}")
    angles = phase_grid(n_angles)
    metric = sliding_sum(distance_metric(streams, constellation, angles), window)
    if counter is not None:
        counter.add(key, streams.size * n_angles)
    return angles[np.argmin(metric, axis=0)]


def unwrap_quarter(phase: np.ndarray, start: float | None = None) -> np.ndarray:
    """Remove pi/2 jumps; with ``start`` the first value is unwrapped against it."""
    if start is None:
        return np.unwrap(phase, period=QUARTER)
    return np.unwrap(np.concatenate([[start], phase]), period=QUARTER)[1:]


def bps_estimate(streams, constellation: Constellation, window: int, n_angles: int = 32,
                 sample_rate: float = 1.0, counter: OpCounter | None = None) -> PhaseTrace:
    """Blind phase search over one or more equal-length streams.

    The distance metric is summed over all streams and over a centered window of
    ``window`` symbols, so ``G`` streams with window ``W`` use ``G * W`` symbols
    per estimate. The result is unwrapped across the pi/2 symmetry.
    """
    arr = np.atleast_2d(np.asarray(streams, dtype=complex))
    if isinstance(streams, (list, tuple)) and len({len(s) for s in streams}) > 1:
        raise InputShapeError("all BPS streams must have the same length")
    est = bps_wrapped(arr, constellation, window, n_angles, counter)
    return PhaseTrace(unwrap_quarter(est), sample_rate)
