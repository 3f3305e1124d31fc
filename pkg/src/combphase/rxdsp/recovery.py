"""Carrier recovery topologies: independent, master-slave and joint.

All three share the same per-channel front: power normalization, blind CMA
pre-convergence, removal of the carrier frequency, and alignment against a
short known preamble. They differ only in where the carrier phase comes from
inside the decision-directed loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import AlignmentError, DegenerateInputError
from ..sigcore import Constellation, Frame, PhaseTrace
from .bps import OpCounter
from .equalizer import (
    Butterfly,
    DspConfig,
    IndependentPlanner,
    JointPlanner,
    MasterSlavePlanner,
    Unit,
    cma_preconverge,
    rotate_taps_for_frequency,
    run_dd,
)
from .foe import estimate_foe_4thpower, remove_frequency
from .frontend import chunked_xcorr, fractional_delay, normalize_power


@dataclass
class RecoveredStream:
    symbols: np.ndarray
    phase_estimate: PhaseTrace
    freq_offset_hz: float
    ambiguity_rotation: int = 0
    conjugated: bool = False
    source_pol: int = 0
    lag: int = 0
    block_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if len(self.symbols) != len(self.phase_estimate):
            raise ValueError("symbols and phase_estimate must have equal length")


@dataclass
class RecoveryResult:
    mode: str
    streams: list  # [channel][pol] -> RecoveredStream
    counter: OpCounter
    flagged_blocks: list  # per channel
    n_blocks: int
    line_indices: list

    @property
    def tracking_failed(self) -> list:
        # the first blocks belong to loop acquisition
        return [f > 0.2 * self.n_blocks for f in self.flagged_blocks]


# --------------------------------------------------------------------------
# helpers


def align_to_preamble(y: np.ndarray, preamble: np.ndarray, max_lag: int = 8,
                      chunk: int = 32) -> tuple[np.ndarray, list, list]:
    """Match each equalizer output to a transmitted polarization and symbol lag.

    Returns the preamble re-indexed to the outputs (zeros where the lag runs
    past its ends), the source polarization and the lag of every output.
    """
    lags = np.arange(-max_lag, max_lag + 1)
    n_pre = preamble.shape[1]
    aligned = np.zeros_like(preamble)
    sources, found = [], []
    for p in range(2):
        scores = np.array([chunked_xcorr(y[p], preamble[q], lags, chunk) for q in range(2)])
        q, j = np.unravel_index(np.argmax(scores), scores.shape)
        lag = int(lags[j])
        # y[k + lag] ~ pre[k]  =>  output k pairs with pre[k - lag]
        k = np.arange(n_pre)
        valid = (k - lag >= 0) & (k - lag < n_pre)
        aligned[p, valid] = preamble[q, k[valid] - lag]
        sources.append(int(q))
        found.append(lag)
    return aligned, sources, found


def preamble_gain(y: np.ndarray, reference: np.ndarray, chunk: int = 32) -> float:
    """Amplitude gain from ``reference`` to ``y``, insensitive to slow phase drift.

    Short coherent chunks are combined in magnitude; a zero-energy reference
    gives unit gain.
    """
    n = len(reference) - len(reference) % chunk
    num = np.abs((y[:n] * np.conj(reference[:n])).reshape(-1, chunk).sum(axis=1)).sum()
    den = np.sum(np.abs(reference[:n]) ** 2)
    if den == 0 or num == 0:
        return 1.0
    return float(num / den)


def resolve_ambiguity(stream: RecoveredStream, reference_symbols: np.ndarray,
                      min_correlation: float = 0.5) -> RecoveredStream:
    """Undo the quarter-turn (and I/Q-swap) ambiguity left by blind phase search.

    Picks the rotation ``k`` in {-1, 0, 1, 2} quarter turns, with or without
    conjugation, that maximizes the real correlation of the first symbols with
    ``reference_symbols``.
    """
    ref = np.asarray(reference_symbols)
    n = len(ref)
    if n < 64:
        raise AlignmentError(f"need at least 64 reference symbols, got {n}")
    mask = ref != 0
    s = stream.symbols[:n][mask]
    r = ref[mask]
    norm = np.sqrt(np.sum(np.abs(s) ** 2) * np.sum(np.abs(r) ** 2))
    if norm == 0:
        raise AlignmentError("stream start has no energy")
    best = (-np.inf, 0, False)
    for conj in (False, True):
        base = np.conj(s) if conj else s
        for k in (0, -1, 1, 2):
            score = np.real(np.sum(base * np.exp(0.5j * np.pi * k) * np.conj(r))) / norm
            if score > best[0] + 1e-12:
                best = (score, k, conj)
    score, k, conj = best
    if score < min_correlation:
        raise AlignmentError(f"best correlation with the reference is only {score:.3f}")
    sym = np.conj(stream.symbols) if conj else stream.symbols
    sym = sym * np.exp(0.5j * np.pi * k)
    ph = stream.phase_estimate
    values = -ph.values if conj else ph.values
    phase = PhaseTrace(values - 0.5 * np.pi * k, ph.sample_rate, ph.t0)
    return RecoveredStream(sym, phase, stream.freq_offset_hz, k, conj, stream.source_pol,
                           stream.lag, stream.block_residual)


def total_frequency(stream: RecoveredStream) -> float:
    """Carrier frequency removed before equalization plus the slope of the phase estimate."""
    ph = stream.phase_estimate
    slope = np.polyfit(ph.time - ph.time.mean(), ph.values, 1)[0]
    return stream.freq_offset_hz + slope / (2 * np.pi)


def estimate_spacing_difference(stream_a: Union[RecoveredStream, float],
                                stream_b: Union[RecoveredStream, float],
                                n_a: int, n_b: int) -> float:
    """Signal-minus-LO comb spacing from the carrier frequencies of two lines.

    Accepts recovered streams (their total frequency is used) or plain
    frequencies in Hz.
    """
    if n_a == n_b:
        raise DegenerateInputError("line indices must differ")
    fa = total_frequency(stream_a) if isinstance(stream_a, RecoveredStream) else float(stream_a)
    fb = total_frequency(stream_b) if isinstance(stream_b, RecoveredStream) else float(stream_b)
    return (fb - fa) / (n_b - n_a)


@dataclass
class _Prepared:
    x: np.ndarray
    taps: np.ndarray
    cma_out: np.ndarray
    sample_rate: float


def _prepare(frame: Frame, config: DspConfig, constellation: Constellation) -> _Prepared:
    if frame.npol != 2:
        raise ValueError("carrier recovery needs dual-polarization frames")
    x = normalize_power(frame).as_array()
    taps, out = cma_preconverge(x, config, constellation)
    return _Prepared(x, taps, out, frame.sample_rate)


def _own_foe(prep: _Prepared) -> float:
    tail = prep.cma_out[:, prep.cma_out.shape[1] // 2:]
    return estimate_foe_4thpower(tail, prep.sample_rate / 2)


def _make_unit(prep: _Prepared, freq: float, preamble: np.ndarray, config: DspConfig):
    x = remove_frequency(prep.x, freq, prep.sample_rate)
    taps = rotate_taps_for_frequency(prep.taps, freq, prep.sample_rate)
    bf = Butterfly(x, config.eq_taps, taps)
    n_al = min(preamble.shape[1], bf.n_symbols)
    y = bf.output(0, n_al)
    aligned, sources, lags = align_to_preamble(y, preamble[:, :n_al])
    # blind CMA leaves the output scale biased by noise; slicers need it exact
    for p in range(2):
        bf.taps[p] /= preamble_gain(y[p], aligned[p])
    return Unit(bf, preamble=aligned), sources, lags


def _finish(mode, units, freqs, sources, lags, counter, config, line_indices,
            symbol_rate) -> RecoveryResult:
    streams, flagged = [], []
    for u, f, src, lag in zip(units, freqs, sources, lags):
        res = np.array(u.block_residual)
        flagged.append(int(np.sum(res > config.track_threshold)))
        pair = []
        for p in range(2):
            st = RecoveredStream(u.symbols[p].copy(), PhaseTrace(u.phase[p].copy(), symbol_rate),
                                 f, source_pol=src[p], lag=lag[p], block_residual=res)
            try:
                st = resolve_ambiguity(st, u.preamble[p])
            except AlignmentError:
                pass
            pair.append(st)
        streams.append(pair)
    n_blocks = len(units[0].block_residual)
    return RecoveryResult(mode, streams, counter, flagged, n_blocks, list(line_indices))


def _preamble_array(preambles, i, n):
    pre = np.asarray(preambles[i])
    return pre[:, :n]


# --------------------------------------------------------------------------
# topologies


def recover_independent(channels: Sequence[Frame], config: DspConfig,
                        constellation: Constellation, preambles: Sequence[np.ndarray],
                        line_indices: Optional[Sequence[int]] = None,
                        counter: Optional[OpCounter] = None) -> RecoveryResult:
    """Every channel runs its own FOE and its own per-polarization BPS."""
    counter = counter or OpCounter()
    line_indices = list(line_indices) if line_indices is not None else list(range(len(channels)))
    preps = [_prepare(ch, config, constellation) for ch in channels]
    freqs = [_own_foe(p) for p in preps]
    made = [_make_unit(p, f, _preamble_array(preambles, i, config.preamble_symbols), config)
            for i, (p, f) in enumerate(zip(preps, freqs))]
    units = [m[0] for m in made]
    run_dd(units, IndependentPlanner(config, constellation, counter), config, constellation)
    return _finish("independent", units, freqs, [m[1] for m in made], [m[2] for m in made],
                   counter, config, line_indices, channels[0].sample_rate / 2)


def recover_master_slave(master: Frame, slaves: Sequence[Frame], config: DspConfig,
                         constellation: Constellation, preambles: Sequence[np.ndarray],
                         line_indices: Sequence[int],
                         spacing_difference_hz: Optional[float] = None,
                         slave_delays: Optional[Sequence[float]] = None,
                         counter: Optional[OpCounter] = None) -> RecoveryResult:
    """Frequency and phase estimated on the master, reused on every slave.

    A slave's carrier frequency is the master's plus ``(n_slave - n_master)``
    times the comb spacing difference. Its phase is the master's BPS phase plus
    a constant; residual differences are left to the slave's equalizer taps.
    Channel 0 of the result is the master. ``slave_delays`` (seconds) shifts
    slave inputs to counter walk-off.
    """
    counter = counter or OpCounter()
    frames = [master, *slaves]
    if slave_delays is not None:
        frames = [master] + [fractional_delay(f, d) for f, d in zip(slaves, slave_delays)]
    preps = [_prepare(ch, config, constellation) for ch in frames]
    f_master = _own_foe(preps[0])
    df = spacing_difference_hz or 0.0
    freqs = [f_master + (n - line_indices[0]) * df for n in line_indices]
    made = [_make_unit(p, f, _preamble_array(preambles, i, config.preamble_symbols), config)
            for i, (p, f) in enumerate(zip(preps, freqs))]
    units = [m[0] for m in made]
    planner = MasterSlavePlanner(config, constellation, counter, 0, range(1, len(units)), units)
    run_dd(units, planner, config, constellation)
    return _finish("master_slave", units, freqs, [m[1] for m in made], [m[2] for m in made],
                   counter, config, line_indices, master.sample_rate / 2)


def recover_joint(channels: Sequence[Frame], config: DspConfig, constellation: Constellation,
                  preambles: Sequence[np.ndarray], line_indices: Sequence[int],
                  spacing_difference_hz: Optional[float] = None,
                  counter: Optional[OpCounter] = None) -> RecoveryResult:
    """One BPS shared by every (channel, polarization) stream in ``config.joint_group``.

    Frequency removal is master-slave style from channel 0. Each grouped stream
    gets a one-tap decision-directed equalizer that absorbs slow phase
    differences between streams; the joint BPS runs inside their update loop.
    """
    counter = counter or OpCounter()
    group = config.joint_group
    if group is None:
        group = [(c, p) for c in range(len(channels)) for p in range(2)]
    group = [tuple(g) for g in group]
    preps = [_prepare(ch, config, constellation) for ch in channels]
    f_ref = _own_foe(preps[0])
    df = spacing_difference_hz or 0.0
    freqs = [f_ref + (n - line_indices[0]) * df for n in line_indices]
    made = [_make_unit(p, f, _preamble_array(preambles, i, config.preamble_symbols), config)
            for i, (p, f) in enumerate(zip(preps, freqs))]
    units = [m[0] for m in made]
    if len(group) > 1:
        for c, p in group:
            units[c].one_tap_mask[p] = True
    planner = JointPlanner(config, constellation, counter, group)
    run_dd(units, planner, config, constellation)
    return _finish("joint", units, freqs, [m[1] for m in made], [m[2] for m in made],
                   counter, config, line_indices, channels[0].sample_rate / 2)
