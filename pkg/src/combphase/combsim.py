"""Frequency-comb phase model and the phase detected on each received channel.

Optical frequencies are stored as offsets from a shared reference so that phase
ramps stay accurate in double precision. A comb line ``n`` carries the phase

    2*pi*nu0*t + phi0(t) + n*(2*pi*f_spacing*t + psi(t))

and mixing a signal line with the matching LO line leaves the difference of the
two. That difference is affine in ``n``, which is what makes two-channel phase
interpolation exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import ConfigError, DegenerateInputError, InputShapeError
from .sigcore import Frame, PhaseTrace, SeedLike, check_grid, rng_stream, wiener_phase


@dataclass(frozen=True)
class CombSpec:
    nu0: float
    f_spacing: float
    linewidth0: float = 0.0
    jitter_linewidth: float = 0.0
    line_powers: Mapping[int, float] = field(default_factory=dict)
    n_lines: int = 25

    def __post_init__(self):
        if not self.f_spacing > 0:
            raise ConfigError(f"f_spacing must be positive, got {self.f_spacing}")
        if self.linewidth0 < 0 or self.jitter_linewidth < 0:
            raise ConfigError("linewidths must be non-negative")
        if self.n_lines < 1 or self.n_lines % 2 == 0:
            raise ConfigError(f"n_lines must be odd, got {self.n_lines}")
        bad = [n for n in self.line_powers if not self.has_line(n)]
        if bad:
            raise ConfigError(f"line_powers names lines outside the comb: {bad}")

    @property
    def line_indices(self) -> range:
        half = (self.n_lines - 1) // 2
        return range(-half, half + 1)

    def has_line(self, n: int) -> bool:
        return abs(n) <= (self.n_lines - 1) // 2

    def line_power(self, n: int) -> float:
        return float(self.line_powers.get(n, 1.0))


@dataclass(frozen=True)
class CombNoise:
    """One realization of a comb's center-line phase and timing-jitter phase."""

    phi0: PhaseTrace
    psi: PhaseTrace

    def __post_init__(self):
        check_grid(self.phi0, self.psi)

    def delayed(self, delay: float) -> "CombNoise":
        return CombNoise(delay_trace(self.phi0, delay), delay_trace(self.psi, delay))


@dataclass(frozen=True)
class DetectedChannel:
    line_index: int
    frame: Frame
    true_phase: PhaseTrace


def comb_noise(comb: CombSpec, n_samples: int, dt: float, seed: SeedLike,
               label: str = "comb") -> CombNoise:
    """Independent Wiener realizations of phi0 and psi for one comb."""
    return CombNoise(
        wiener_phase(comb.linewidth0, n_samples, dt, rng_stream(seed, label, "phi0")),
        wiener_phase(comb.jitter_linewidth, n_samples, dt, rng_stream(seed, label, "psi")),
    )


def delay_trace(trace: PhaseTrace, delay: float) -> PhaseTrace:
    """Trace delayed by ``delay`` seconds (linear interpolation, edge hold)."""
    if delay == 0:
        return trace
    shift = delay * trace.sample_rate
    k = np.arange(len(trace)) - shift
    return PhaseTrace(
        np.interp(k, np.arange(len(trace)), trace.values), trace.sample_rate, trace.t0
    )


def comb_line_phase(comb: CombSpec, n: int, phi0: PhaseTrace, psi: PhaseTrace) -> PhaseTrace:
    check_grid(phi0, psi)
    t = phi0.time
    values = 2 * np.pi * comb.nu0 * t + phi0.values + n * (
        2 * np.pi * comb.f_spacing * t + psi.values
    )
    return PhaseTrace(values, phi0.sample_rate, phi0.t0)


def detected_phase(sig: CombSpec, lo: CombSpec, n: int, sig_noise: CombNoise,
                   lo_noise: CombNoise) -> PhaseTrace:
    """Phase of line ``n`` after mixing the signal comb with the LO comb.

    Frequency differences are formed before multiplying by time, so large
    absolute spacings do not cost precision.
    """
    check_grid(sig_noise.phi0, lo_noise.phi0)
    t = sig_noise.phi0.time
    common = 2 * np.pi * (sig.nu0 - lo.nu0) * t + (sig_noise.phi0.values - lo_noise.phi0.values)
    per_line = 2 * np.pi * (sig.f_spacing - lo.f_spacing) * t + (
        sig_noise.psi.values - lo_noise.psi.values
    )
    return PhaseTrace(common + n * per_line, sig_noise.phi0.sample_rate, sig_noise.phi0.t0)


def interpolate_phase(phi_n: PhaseTrace, phi_m: PhaseTrace, n: int, m: int, k: float) -> PhaseTrace:
    """Phase of line ``k`` from the phases of lines ``n`` and ``m``."""
    if n == m:
        raise DegenerateInputError("interpolation needs two distinct line indices")
    check_grid(phi_n, phi_m)
    w = (k - n) / (m - n)
    return PhaseTrace(phi_n.values + w * (phi_m.values - phi_n.values), phi_n.sample_rate, phi_n.t0)


def synthesize_channel(sig: CombSpec, lo: CombSpec, n: int, frame: Frame,
                       sig_noise: CombNoise, lo_noise: CombNoise,
                       extra_phase: Optional[PhaseTrace] = None,
                       lo_delay: float = 0.0) -> DetectedChannel:
    """Apply the detected comb phase of line ``n`` to a baseband frame.

    ``lo_delay`` shifts the LO comb's noise in time before mixing, a first-order
    stand-in for carrier/LO decorrelation by fiber dispersion. ``extra_phase`` is
    added on top (used for the nonlinear phase proxy).
    """
    if not (sig.has_line(n) and lo.has_line(n)):
        raise ConfigError(f"line {n} is not present in both combs")
    if len(sig_noise.phi0) != len(frame) or sig_noise.phi0.sample_rate != frame.sample_rate:
        raise InputShapeError("comb noise is not sampled on the frame's grid")
    if lo_delay:
        lo_noise = lo_noise.delayed(lo_delay)
    phase = detected_phase(sig, lo, n, sig_noise, lo_noise)
    if extra_phase is not None:
        phase = phase + extra_phase
    phase = PhaseTrace(phase.values, frame.sample_rate, frame.t0)
    rot = np.exp(1j * phase.values)
    amp = np.sqrt(sig.line_power(n) * lo.line_power(n))
    if amp != 1.0:
        rot = amp * rot
    return DetectedChannel(n, frame.replace(*[p * rot for p in frame.pols]), phase)
