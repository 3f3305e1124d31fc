"""Signal types, square-QAM mapping, RRC pulse shaping and phase-noise generation."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, InputShapeError

SeedLike = Union[int, tuple, np.random.Generator]


@dataclass(frozen=True)
class Frame:
    """Block of complex baseband samples, one or two polarizations.

    ``samples_y`` is ``None`` for a single-polarization frame.
    """

    samples_x: np.ndarray
    samples_y: Optional[np.ndarray]
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples_x, dtype=complex)
        object.__setattr__(self, "samples_x", x)
        if self.samples_y is not None:
            y = np.asarray(self.samples_y, dtype=complex)
            if y.shape != x.shape:
                raise InputShapeError(
                    f"polarization lengths differ: {x.shape} vs {y.shape}"
                )
            object.__setattr__(self, "samples_y", y)
        if not self.sample_rate > 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def npol(self) -> int:
        return 1 if self.samples_y is None else 2

    def __len__(self) -> int:
        return self.samples_x.shape[-1]

    @property
    def pols(self) -> list[np.ndarray]:
        return [self.samples_x] if self.samples_y is None else [self.samples_x, self.samples_y]

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.sample_rate

    def as_array(self) -> np.ndarray:
        """Samples stacked as an ``(npol, n)`` array."""
        return np.vstack(self.pols)

    def replace(self, *pols: np.ndarray, sample_rate: float | None = None,
                t0: float | None = None) -> "Frame":
        """New frame with the given polarizations and otherwise the same metadata."""
        if len(pols) == 1 and np.ndim(pols[0]) == 2:
            pols = tuple(pols[0])
        return Frame(
            pols[0],
            pols[1] if len(pols) > 1 else None,
            self.sample_rate if sample_rate is None else sample_rate,
            self.t0 if t0 is None else t0,
        )

    @classmethod
    def dual(cls, x, y, sample_rate: float, t0: float = 0.0) -> "Frame":
        return cls(x, y, sample_rate, t0)


@dataclass(frozen=True)
class PhaseTrace:
    values: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("phase trace contains non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.values)) / self.sample_rate

    def same_grid(self, other: "PhaseTrace") -> bool:
        return (
            len(self) == len(other)
            and self.sample_rate == other.sample_rate
            and self.t0 == other.t0
        )

    def __add__(self, other: "PhaseTrace") -> "PhaseTrace":
        check_grid(self, other)
        return PhaseTrace(self.values + other.values, self.sample_rate, self.t0)

    def __sub__(self, other: "PhaseTrace") -> "PhaseTrace":
        check_grid(self, other)
        return PhaseTrace(self.values - other.values, self.sample_rate, self.t0)

    def __neg__(self) -> "PhaseTrace":
        return PhaseTrace(-self.values, self.sample_rate, self.t0)

    @classmethod
    def zeros(cls, n: int, sample_rate: float, t0: float = 0.0) -> "PhaseTrace":
        return cls(np.zeros(n), sample_rate, t0)


def check_grid(*traces: PhaseTrace) -> None:
    first = traces[0]
    for tr in traces[1:]:
        if not first.same_grid(tr):
            raise InputShapeError(
                "phase traces are not on the same sample grid "
                f"({len(first)} @ {first.sample_rate} Hz vs {len(tr)} @ {tr.sample_rate} Hz)"
            )


# --------------------------------------------------------------------------
# random streams


def _stream_key(label: Union[str, int]) -> int:
    """Non-negative integer for a seed or label element; ints and strings never collide."""
    if isinstance(label, (int, np.integer)):
        v = int(label)
        return 2 * v if v >= 0 else -2 * v - 1
    return (1 << 40) + zlib.crc32(str(label).encode())


def rng_stream(seed: SeedLike, *labels: Union[str, int]) -> np.random.Generator:
    """Counter-based generator for the substream named by ``labels``.

    The same ``(seed, labels)`` always yields the same stream, independent of the
    order in which other substreams are drawn. ``seed`` may be an int or a tuple
    of ints and strings; a Generator passed as ``seed`` is returned unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    parts = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    # SeedSequence ignores trailing zero words; leading counts keep (1, 0) apart from (1,)
    entropy = [len(parts), *(_stream_key(v) for v in parts)]
    key = (len(labels), *(_stream_key(lab) for lab in labels))
    ss = np.random.SeedSequence(entropy=entropy, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def random_bits(n: int, seed: SeedLike, *labels) -> np.ndarray:
    return rng_stream(seed, "bits", *labels).integers(0, 2, size=n, dtype=np.uint8)


# --------------------------------------------------------------------------
# constellations


def _gray(n: int) -> np.ndarray:
    i = np.arange(n)
    return i ^ (i >> 1)


@dataclass(frozen=True)
class Constellation:
    """Square QAM alphabet with per-axis reflected-Gray labels.

    ``points[i]`` carries label ``i``; label bits are the I-axis Gray bits followed
    by the Q-axis Gray bits, MSB first. On each axis Gray code 0 sits at the most
    positive amplitude, so QPSK label ``00`` is ``(1+1j)/sqrt(2)``.
    """

    points: np.ndarray
    bit_labels: np.ndarray
    order: int
    levels: np.ndarray = field(repr=False)

    @classmethod
    def qam(cls, order: int) -> "Constellation":
        m = int(round(np.log2(order)))
        if order < 4 or 2**m != order or m % 2:
            raise ConfigError(f"square QAM order must be 4, 16, 64, ...; got {order}")
        k = m // 2
        n_levels = 2**k
        amp = (n_levels - 1 - 2 * np.arange(n_levels)).astype(float)
        norm = np.sqrt(2 * (n_levels**2 - 1) / 3)
        gray = _gray(n_levels)
        # amp_of_code[g] = amplitude carrying Gray code g
        amp_of_code = np.empty(n_levels)
        amp_of_code[gray] = amp
        labels = np.arange(order)
        i_code, q_code = labels >> k, labels & (n_levels - 1)
        points = (amp_of_code[i_code] + 1j * amp_of_code[q_code]) / norm
        bits = ((labels[:, None] >> np.arange(m - 1, -1, -1)) & 1).astype(np.uint8)
        return cls(points, bits, order, np.sort(amp) / norm)

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_labels.shape[1]

    @cached_property
    def radii(self) -> np.ndarray:
        return np.unique(np.round(np.abs(self.points), 12))

    def nearest_index(self, symbols: np.ndarray, chunk: int = 1 << 15) -> np.ndarray:
        """Index of the closest point; exact ties go to the lowest index."""
        symbols = np.asarray(symbols).ravel()
        out = np.empty(symbols.size, dtype=np.int64)
        for start in range(0, symbols.size, chunk):
            s = symbols[start:start + chunk]
            d = np.abs(s[:, None] - self.points[None, :]) ** 2
            out[start:start + chunk] = np.argmin(d, axis=1)
        return out

    def slice(self, symbols: np.ndarray) -> np.ndarray:
        """Nearest constellation points by per-axis rounding (fast path)."""
        lv = self.levels
        step = lv[1] - lv[0]
        n = len(lv) - 1
        i = np.clip(np.rint((symbols.real - lv[0]) / step), 0, n)
        q = np.clip(np.rint((symbols.imag - lv[0]) / step), 0, n)
        return (lv[0] + step * i) + 1j * (lv[0] + step * q)


def bits_to_indices(bits: np.ndarray, constellation: Constellation) -> np.ndarray:
    m = constellation.bits_per_symbol
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % m:
        raise InputShapeError(
            f"{bits.size} bits is not a multiple of {m} bits per symbol"
        )
    weights = 1 << np.arange(m - 1, -1, -1)
    return bits.reshape(-1, m) @ weights


def map_qam(bits: np.ndarray, constellation: Constellation) -> np.ndarray:
    return constellation.points[bits_to_indices(bits, constellation)]


def demap_hard(symbols: np.ndarray, constellation: Constellation) -> np.ndarray:
    idx = constellation.nearest_index(symbols)
    return constellation.bit_labels[idx].ravel()


# --------------------------------------------------------------------------
# pulse shaping


def _rrc_impulse(t: np.ndarray, rolloff: float) -> np.ndarray:
    """Continuous-time RRC impulse response, ``t`` in symbol periods."""
    b = rolloff
    h = np.empty_like(t, dtype=float)
    zero = np.isclose(t, 0.0, atol=1e-12)
    sing = np.isclose(np.abs(4 * b * t), 1.0, atol=1e-12)
    reg = ~(zero | sing)
    tr = t[reg]
    h[reg] = (
        np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))
    ) / (np.pi * tr * (1 - (4 * b * tr) ** 2))
    h[zero] = 1 - b + 4 * b / np.pi
    h[sing] = (b / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return h


def rrc_taps(rolloff: float, sps: int, span: int) -> np.ndarray:
    """Unit-energy RRC FIR of odd length ``span * sps + 1``.

    Raises
    ------
    ConfigError
        If fewer than 99.9 % of the pulse energy falls inside ``span`` symbols.
    """
    if not 0 < rolloff <= 1:
        raise ConfigError(f"rolloff must be in (0, 1], got {rolloff}")
    if sps < 2 or int(sps) != sps:
        raise ConfigError(f"sps must be an integer >= 2, got {sps}")
    if span < 2 or span % 2:
        raise ConfigError(f"span must be an even number of symbols, got {span}")
    n = span * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps
    h = _rrc_impulse(t, rolloff)
    # continuous pulse has unit energy in symbol-time units
    captured = np.sum(h**2) / sps
    if captured < 0.999:
        raise ConfigError(
            f"span of {span} symbols holds only {100 * captured:.3f}% of the RRC energy "
            f"at rolloff {rolloff}; need 99.9%"
        )
    return h / np.sqrt(np.sum(h**2))


def rrc_spectrum(f: np.ndarray, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Square root of the raised-cosine spectrum, unit peak."""
    af = np.abs(np.asarray(f, dtype=float)) / symbol_rate
    lo, hi = (1 - rolloff) / 2, (1 + rolloff) / 2
    rc = np.where(af <= lo, 1.0, 0.0)
    band = (af > lo) & (af <= hi)
    rc[band] = 0.5 * (1 + np.cos(np.pi / rolloff * (af[band] - lo)))
    return np.sqrt(rc)


def upsample(symbols: np.ndarray, sps: int) -> np.ndarray:
    out = np.zeros(len(symbols) * sps, dtype=complex)
    out[::sps] = symbols
    return out


def rrc_shape(symbols: np.ndarray, rolloff: float, sps: int, span: int = 64,
              symbol_rate: float = 1.0) -> Frame:
    """Upsample and RRC-filter a symbol sequence.

    The filter delay is removed, so sample ``k * sps`` is the peak of symbol ``k``
    and the output has ``len(symbols) * sps`` samples (the filter tails past the
    first and last symbol are cut).
    """
    taps = rrc_taps(rolloff, sps, span)
    delay = (len(taps) - 1) // 2
    wave = np.convolve(upsample(np.asarray(symbols, dtype=complex), sps), taps)
    wave = wave[delay:delay + len(symbols) * sps]
    return Frame(wave, None, symbol_rate * sps)


# --------------------------------------------------------------------------
# phase processes


def wiener_phase(linewidth: float, n_samples: int, dt: float, seed: SeedLike,
                 label: str = "wiener") -> PhaseTrace:
    """Discrete Wiener phase starting at zero.

    Increments are N(0, 2*pi*linewidth*dt); sample ``k`` holds the sum of ``k``
    increments.
    """
    if linewidth < 0:
        raise ConfigError(f"linewidth must be non-negative, got {linewidth}")
    values = np.zeros(n_samples)
    if linewidth > 0 and n_samples > 1:
        rng = rng_stream(seed, label)
        steps = rng.standard_normal(n_samples - 1) * np.sqrt(2 * np.pi * linewidth * dt)
        np.cumsum(steps, out=values[1:])
    return PhaseTrace(values, 1.0 / dt, 0.0)
