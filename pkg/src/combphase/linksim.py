"""Link impairments: dispersion, additive noise, a nonlinear phase-noise proxy, ADC front end.

The proxy does not propagate a field. It multiplies each channel by
``exp(1j * theta_c(t))`` where ``theta_c`` is an Ornstein-Uhlenbeck process whose
stationary variance grows with launch power, and channels share a common part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps_signal

from .errors import ConfigError
from .sigcore import Frame, PhaseTrace, SeedLike, rng_stream

C_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class FiberSpec:
    length_km: float
    dispersion_ps_nm_km: float = 16.5
    ref_wavelength_nm: float = 1550.0
    channel_center_offset_hz: float = 0.0

    def __post_init__(self):
        if self.length_km < 0:
            raise ConfigError(f"fiber length must be >= 0, got {self.length_km}")

    @property
    def beta2(self) -> float:
        """Group-velocity dispersion in s^2/m."""
        d = self.dispersion_ps_nm_km * 1e-6  # s/m^2
        lam = self.ref_wavelength_nm * 1e-9
        return -d * lam**2 / (2 * np.pi * C_LIGHT)

    @property
    def length_m(self) -> float:
        return self.length_km * 1e3

    def delay_spread(self, bandwidth: float) -> float:
        """Group-delay spread in seconds across ``bandwidth`` Hz."""
        return abs(self.beta2) * self.length_m * 2 * np.pi * bandwidth

    def memory_samples(self, sample_rate: float) -> int:
        return int(math.ceil(self.delay_spread(sample_rate) * sample_rate))


@dataclass(frozen=True)
class NlProxySpec:
    base_variance_rate: float
    correlation_time: float
    power_exponent: float = 2.0
    inter_channel_corr: float = 1.0
    decorrelation_delay: float = 0.0
    ref_power_dbm: float = 0.0

    def __post_init__(self):
        if not self.correlation_time > 0:
            raise ConfigError("correlation_time must be positive")
        if not 0.0 <= self.inter_channel_corr <= 1.0:
            raise ConfigError("inter_channel_corr must lie in [0, 1]")
        if self.base_variance_rate < 0:
            raise ConfigError("base_variance_rate must be non-negative")

    def stationary_variance(self, launch_power_dbm: float) -> float:
        if launch_power_dbm == -np.inf:
            return 0.0
        rel = 10 ** ((launch_power_dbm - self.ref_power_dbm) / 10)
        return rel**self.power_exponent * self.base_variance_rate * self.correlation_time


# --------------------------------------------------------------------------
# dispersion


def _cd_response(n: int, fs: float, fiber: FiberSpec, sign: int) -> np.ndarray:
    w = 2 * np.pi * np.fft.fftfreq(n, 1 / fs)
    wc = 2 * np.pi * fiber.channel_center_offset_hz
    phase = sign * fiber.beta2 * fiber.length_m / 2 * ((w + wc) ** 2 - wc**2)
    return np.exp(1j * phase)


def apply_cd(frame: Frame, fiber: FiberSpec, sign: int = 1,
             block_size: Optional[int] = None) -> Frame:
    """Quadratic-phase all-pass filter; ``sign=-1`` compensates ``sign=+1``.

    By default the whole frame is filtered with one FFT, which is exactly unitary.
    ``block_size`` switches to overlap-save; the block must be at least four times
    the fiber's dispersion memory. The overlap is four memories (at most half the
    block) because the all-pass response decays slowly beyond its nominal spread.
    """
    if sign not in (1, -1):
        raise ConfigError("sign must be +1 or -1")
    if fiber.length_km == 0:
        return frame
    n = len(frame)
    if block_size is None:
        h = _cd_response(n, frame.sample_rate, fiber, sign)
        return frame.replace(*[np.fft.ifft(np.fft.fft(p) * h) for p in frame.pols])
    return frame.replace(*[_overlap_save(p, frame.sample_rate, fiber, sign, block_size)
                           for p in frame.pols])


def _overlap_save(x: np.ndarray, fs: float, fiber: FiberSpec, sign: int, nfft: int) -> np.ndarray:
    mem = fiber.memory_samples(fs)
    if nfft < 4 * mem:
        raise ConfigError(f"overlap-save block {nfft} is shorter than 4x the CD memory ({mem})")
    mem = min(4 * mem, nfft // 2)
    mem -= mem % 2
    h = _cd_response(nfft, fs, fiber, sign)
    half = mem // 2
    step = nfft - mem
    n = len(x)
    n_blocks = -(-n // step)
    padded = np.concatenate([np.zeros(half, complex), x, np.zeros(n_blocks * step + mem, complex)])
    out = np.empty(n_blocks * step, dtype=complex)
    for b in range(n_blocks):
        seg = padded[b * step:b * step + nfft]
        y = np.fft.ifft(np.fft.fft(seg) * h)
        out[b * step:(b + 1) * step] = y[half:half + step]
    return out[:n]


# --------------------------------------------------------------------------
# noise


def add_awgn(frame: Frame, snr_db: float, seed: SeedLike, oversampling: float = 1.0) -> Frame:
    """Add circular Gaussian noise per polarization.

    ``snr_db`` is referred to the signal bandwidth, i.e. ``sample_rate/oversampling``;
    ``snr_db = inf`` returns the frame untouched.
    """
    if np.isnan(snr_db):
        raise ConfigError("snr_db must not be NaN")
    if snr_db == np.inf:
        return frame
    snr = 10 ** (snr_db / 10)
    out = []
    for i, p in enumerate(frame.pols):
        rng = rng_stream(seed, "awgn", i)
        var = np.mean(np.abs(p) ** 2) * oversampling / snr
        noise = (rng.standard_normal(len(p)) + 1j * rng.standard_normal(len(p))) * np.sqrt(var / 2)
        out.append(p + noise)
    return frame.replace(*out)


def ou_process(n: int, dt: float, correlation_time: float, variance: float,
               rng: np.random.Generator) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck samples (exact discretization)."""
    if variance == 0 or n == 0:
        return np.zeros(n)
    a = math.exp(-dt / correlation_time)
    b = math.sqrt(variance * (1 - a * a))
    w = rng.standard_normal(n)
    w[0] *= math.sqrt(variance) / b
    return sps_signal.lfilter([b], [1.0, -a], w)


def nl_phase_proxy(frames: Sequence[Frame], launch_power_dbm: float, spec: NlProxySpec,
                   seed: SeedLike) -> tuple[list[Frame], list[PhaseTrace]]:
    """Apply correlated fast phase noise standing in for fiber nonlinearity.

    Channel ``c`` gets ``sqrt(rho)*common + sqrt(1-rho)*own_c``; its copy of the
    common part is delayed by ``c * decorrelation_delay`` to mimic walk-off
    between channels. Returns the rotated frames and the injected traces.
    """
    if not frames:
        raise ConfigError("nl_phase_proxy needs at least one channel")
    fs = frames[0].sample_rate
    n = len(frames[0])
    var = spec.stationary_variance(launch_power_dbm)
    if var == 0:
        return list(frames), [PhaseTrace.zeros(n, fs, f.t0) for f in frames]
    rho = spec.inter_channel_corr
    dt = 1 / fs
    shift = spec.decorrelation_delay * fs
    pad = int(math.ceil(abs(shift) * (len(frames) - 1))) + 2
    common = ou_process(n + pad, dt, spec.correlation_time, var, rng_stream(seed, "nl", "common"))
    grid = np.arange(n + pad)
    out_frames, traces = [], []
    for c, frame in enumerate(frames):
        if len(frame) != n or frame.sample_rate != fs:
            raise ConfigError("all channels must share one sample grid")
        if shift:
            shared = np.interp(np.arange(n) + pad - 1 - c * shift, grid, common)
        else:
            shared = common[pad:]
        theta = math.sqrt(rho) * shared
        if rho < 1:
            own = ou_process(n, dt, spec.correlation_time, var, rng_stream(seed, "nl", "own", c))
            theta = theta + math.sqrt(1 - rho) * own
        rot = np.exp(1j * theta)
        out_frames.append(frame.replace(*[p * rot for p in frame.pols]))
        traces.append(PhaseTrace(theta, fs, frame.t0))
    return out_frames, traces


# --------------------------------------------------------------------------
# receiver front end


def rx_frontend(frame: Frame, target_rate: float, bandwidth: Optional[float] = None,
                skew: float = 0.0, enob: Optional[float] = None,
                seed: Optional[SeedLike] = None) -> Frame:
    """Brick-wall low-pass, fractional delay ``skew`` (s), FFT resampling.

    ``enob`` optionally quantizes I and Q to ``2**enob`` levels over +-4 rms;
    with ``seed`` a uniform dither of one LSB is added first.
    """
    fs = frame.sample_rate
    if target_rate > fs * (1 + 1e-12):
        raise ConfigError(f"target rate {target_rate} exceeds source rate {fs}")
    n = len(frame)
    n_out = int(round(n * target_rate / fs))
    f = np.fft.fftfreq(n, 1 / fs)
    gain = np.ones(n, dtype=complex)
    if bandwidth is not None and bandwidth < fs / 2:
        gain[np.abs(f) > bandwidth] = 0.0
    if skew:
        gain *= np.exp(-2j * np.pi * f * skew)
    out = []
    for p in frame.pols:
        spec = np.fft.fft(p) * gain
        if n_out != n:
            y = sps_signal.resample(spec, n_out, domain="freq")
        else:
            y = np.fft.ifft(spec)
        out.append(y)
    if enob is not None:
        out = [_quantize(p, enob, seed, i) for i, p in enumerate(out)]
    return frame.replace(*out, sample_rate=fs * n_out / n)


def _quantize(x: np.ndarray, enob: float, seed, idx: int) -> np.ndarray:
    full = 4 * np.sqrt(np.mean(np.abs(x) ** 2) / 2)
    lsb = 2 * full / 2**enob
    parts = [x.real, x.imag]
    if seed is not None:
        rng = rng_stream(seed, "dither", idx)
        parts = [v + (rng.random(len(v)) - 0.5) * lsb for v in parts]
    q = [np.clip(np.round(v / lsb) * lsb, -full, full) for v in parts]
    return q[0] + 1j * q[1]
