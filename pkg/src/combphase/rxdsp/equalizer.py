"""2x2 butterfly equalizer with block-parallel tap updates.

Taps are frozen inside each block of ``block_size`` symbols and updated once per
block with the error accumulated over that block, which is how a parallel
hardware equalizer behaves. The step is divided by the mean input sample power,
so ``eq_step`` is roughly the per-symbol loop gain seen by a common rotation of
the taps.

Decision-directed mode takes a *phase planner*: after every block of equalizer
outputs the planner returns the carrier phase for each stream, the decision is
taken on the derotated output, and the phase is re-applied to the error before
the taps are updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ConvergenceError
from ..sigcore import Constellation
from .bps import OpCounter, bps_wrapped, unwrap_quarter, window_halves

MODES = ("independent", "master_slave", "joint")


@dataclass(frozen=True)
class DspConfig:
    eq_taps: int = 35
    eq_step: float = 1e-4
    block_size: int = 64
    cma_preconv_symbols: int = 32768
    cma_step: float = 3e-4
    bps_test_angles: int = 32
    bps_window: int = 128
    joint_window: Optional[int] = None
    joint_group: Optional[tuple] = None
    mode: str = "independent"
    one_tap_step: Optional[float] = None
    track_threshold: float = 0.15
    preamble_symbols: int = 1024

    def __post_init__(self):
        problems = []
        if self.eq_taps < 1 or self.eq_taps % 2 == 0:
            problems.append(f"eq_taps must be odd and positive (got {self.eq_taps})")
        if self.bps_window < 1:
            problems.append(f"bps_window must be >= 1 (got {self.bps_window})")
        if self.joint_window is not None and self.joint_window < 1:
            problems.append(f"joint_window must be >= 1 (got {self.joint_window})")
        if self.block_size < 1:
            problems.append(f"block_size must be >= 1 (got {self.block_size})")
        if self.bps_test_angles < 2:
            problems.append("bps_test_angles must be >= 2")
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES} (got {self.mode!r})")
        if self.eq_step <= 0 or self.cma_step <= 0:
            problems.append("step sizes must be positive")
        if self.preamble_symbols < self.block_size:
            problems.append("preamble_symbols must cover at least one block")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def tap_step(self) -> float:
        return self.eq_step if self.one_tap_step is None else self.one_tap_step

    def window_for_group(self, size: int) -> int:
        if self.joint_window is not None:
            return self.joint_window
        return max(1, self.bps_window // size)


class Butterfly:
    """Fractionally spaced 2x2 FIR over a 2-samples-per-symbol input.

    Output symbol ``k`` uses input samples ``2k - c ... 2k + c`` with ``c = taps // 2``.
    """

    def __init__(self, x: np.ndarray, n_taps: int, taps: Optional[np.ndarray] = None):
        x = np.atleast_2d(np.asarray(x, dtype=complex))
        self.n_taps = n_taps
        c = n_taps // 2
        xp = np.pad(x, ((0, 0), (c, c)))
        self.win = sliding_window_view(xp, n_taps, axis=-1)[:, ::2, :]
        self.n_symbols = self.win.shape[1]
        if taps is None:
            taps = np.zeros((2, 2, n_taps), dtype=complex)
            taps[0, 0, c] = taps[1, 1, c] = 1.0
        self.taps = np.array(taps, dtype=complex)
        self.norm = np.mean(np.abs(x) ** 2)

    def output(self, k0: int, k1: int) -> np.ndarray:
        return np.einsum("pqt,qlt->pl", self.taps, self.win[:, k0:k1])

    def update(self, k0: int, k1: int, err: np.ndarray, step: float) -> None:
        grad = np.einsum("pl,qlt->pqt", err, np.conj(self.win[:, k0:k1]))
        self.taps += (step / self.norm) * grad


def rotate_taps_for_frequency(taps: np.ndarray, freq: float, sample_rate: float) -> np.ndarray:
    """Taps equivalent to ``taps`` once a carrier offset ``freq`` is removed from the input."""
    n = taps.shape[-1]
    t = (np.arange(n) - n // 2) / sample_rate
    return taps * np.exp(2j * np.pi * freq * t)


class _DivergenceWatch:
    def __init__(self, limit: int = 10, lo: float = 0.1, hi: float = 10.0):
        self.limit, self.lo, self.hi = limit, lo, hi
        self.run = 0

    def check(self, y: np.ndarray, where: str) -> None:
        p = np.mean(np.abs(y) ** 2, axis=-1)
        # runaway growth is reported at once, before it overflows
        runaway = not np.all(np.isfinite(p)) or np.any(p > 1e6 * self.hi)
        if np.any((p < self.lo) | (p > self.hi)) or runaway:
            self.run += 1
            if self.run >= self.limit or runaway:
                raise ConvergenceError(
                    f"{where}: equalizer output power {p} outside [{self.lo}, {self.hi}] "
                    f"for {self.limit} consecutive blocks"
                )
        else:
            self.run = 0


def cma_preconverge(x: np.ndarray, config: DspConfig, constellation: Constellation,
                    taps: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Blind pre-convergence on the first ``cma_preconv_symbols`` symbols.

    The first quarter of the pass uses plain CMA towards the Godard radius
    ``E|s|^4 / E|s|^2``, which pulls mixed polarizations apart; after that,
    constellations with several rings switch to the radius-directed
    (multi-modulus) error. The step holds at ``cma_step`` for the
    first half of the pass and then decays geometrically to a tenth of it, so
    the handed-over taps carry little gradient noise. Returns the taps and the
    outputs produced along the way.
    """
    bf = Butterfly(x, config.eq_taps, taps)
    n = min(config.cma_preconv_symbols, bf.n_symbols)
    radii2 = constellation.radii**2
    pts = constellation.points
    godard = np.mean(np.abs(pts) ** 4) / np.mean(np.abs(pts) ** 2)
    out = np.empty((2, n), dtype=complex)
    watch = _DivergenceWatch()
    for k0 in range(0, n, config.block_size):
        k1 = min(k0 + config.block_size, n)
        y = bf.output(k0, k1)
        watch.check(y, "CMA")
        p = np.abs(y) ** 2
        if len(radii2) > 1 and k0 >= n // 4:
            target = radii2[np.argmin(np.abs(p[..., None] - radii2), axis=-1)]
        else:
            target = godard
        settle = max(0.0, (k0 - n / 2) / (n / 2))
        bf.update(k0, k1, y * (target - p), config.cma_step * 10.0 ** -settle)
        out[:, k0:k1] = y
    return bf.taps, out


# --------------------------------------------------------------------------
# decision-directed engine


@dataclass
class Unit:
    """Equalizer state of one received channel during decision-directed processing."""

    bf: Butterfly
    preamble: Optional[np.ndarray] = None
    one_tap_mask: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=bool))
    one_tap: np.ndarray = field(default_factory=lambda: np.ones(2, dtype=complex))
    symbols: np.ndarray = None
    phase: np.ndarray = None
    block_residual: list = field(default_factory=list)

    def __post_init__(self):
        n = self.bf.n_symbols
        self.symbols = np.zeros((2, n), dtype=complex)
        self.phase = np.zeros((2, n))
        self._m4 = []

    def init_one_tap(self, n: int) -> None:
        """Rotate each one-tap stream to absolute phase zero using the known preamble."""
        y = self.bf.output(0, n)
        corr = np.sum(y * np.conj(self.preamble[:, :n]), axis=1)
        self.one_tap = np.where(self.one_tap_mask, np.exp(-1j * np.angle(corr)), 1.0 + 0j)

    def lock_residual(self, r: np.ndarray, history: int = 4) -> float:
        """Worst residual phase (rad) seen by a fourth-power detector on recent blocks.

        Square QAM has E[s**4] real and negative; a locked loop keeps the angle of
        ``-mean(r**4)`` near zero.
        """
        self._m4.append(np.sum(r**4, axis=1))
        self._m4 = self._m4[-history:]
        return float(np.max(np.abs(np.angle(-np.sum(self._m4, axis=0)) / 4)))


class IndependentPlanner:
    """One single-stream BPS per polarization of every channel."""

    def __init__(self, config: DspConfig, constellation: Constellation, counter: OpCounter):
        self.cfg, self.const, self.counter = config, constellation, counter
        self.window = config.bps_window
        self.last: dict = {}

    def needs_extension(self, u: int) -> bool:
        return True

    def bps(self, z: np.ndarray, core: slice, window: int, key) -> np.ndarray:
        est = bps_wrapped(z, self.const, window, self.cfg.bps_test_angles, self.counter, key)
        est = unwrap_quarter(est[core], self.last.get(key))
        self.last[key] = est[-1]
        return est

    def __call__(self, z_ext: dict, core: slice, k0: int, k1: int) -> dict:
        return {
            u: np.vstack([self.bps(z[p], core, self.window, (u, p)) for p in range(2)])
            for u, z in z_ext.items()
        }


class MasterSlavePlanner(IndependentPlanner):
    """BPS on the master channel only; slaves reuse its phase plus a constant offset.

    The slave offset is taken once, from a data-aided average over the first
    block. From then on the slave's own taps are its only phase tracker.
    """

    def __init__(self, config, constellation, counter, master: int, slaves: Sequence[int],
                 units: Sequence[Unit]):
        super().__init__(config, constellation, counter)
        self.master, self.slaves, self.units = master, list(slaves), units
        self.offset: dict = {}
        for s in self.slaves:
            for p in range(2):
                counter.add((s, p), 0)

    def needs_extension(self, u: int) -> bool:
        return u == self.master

    def __call__(self, z_ext, core, k0, k1):
        zm = z_ext[self.master]
        theta_m = np.vstack([self.bps(zm[p], core, self.window, (self.master, p)) for p in range(2)])
        out = {self.master: theta_m}
        for s in self.slaves:
            if s not in self.offset:
                z = z_ext[s][:, core]
                pre = self.units[s].preamble[:, k0:k1]
                corr = np.sum(z * np.exp(-1j * theta_m) * np.conj(pre), axis=1)
                self.offset[s] = np.angle(corr)[:, None]
            out[s] = theta_m + self.offset[s]
        return out


class JointPlanner(IndependentPlanner):
    """One BPS over all streams in the group; other streams run independently."""

    def __init__(self, config, constellation, counter, group: Sequence[tuple]):
        super().__init__(config, constellation, counter)
        self.group = [tuple(g) for g in group]
        self.joint_window = config.window_for_group(len(self.group))
        self.window = max(self.window, self.joint_window)

    def __call__(self, z_ext, core, k0, k1):
        out = {u: np.zeros((2, core.stop - core.start)) for u in z_ext}
        stack = np.vstack([z_ext[u][p] for u, p in self.group])
        theta = self.bps(stack, core, self.joint_window, "joint")
        for u, p in self.group:
            out[u][p] = theta
        for u, z in z_ext.items():
            for p in range(2):
                if (u, p) not in self.group:
                    out[u][p] = self.bps(z[p], core, self.cfg.bps_window, (u, p))
        return out


def run_dd(units: Sequence[Unit], planner, config: DspConfig,
           constellation: Constellation) -> None:
    """Decision-directed pass over all units in lock-step, block by block.

    Per block: equalizer outputs (extended by the BPS window where the planner
    needs it), one-tap gains, planner phases, decisions on the derotated
    outputs, then one-tap and butterfly updates with the phase re-applied to
    the error.
    """
    n = units[0].bf.n_symbols
    before, after = window_halves(planner.window)
    step, one_step = config.eq_step, config.tap_step
    watches = [_DivergenceWatch() for _ in units]
    for u in units:
        if u.one_tap_mask.any():
            u.init_one_tap(min(config.block_size, n))
    for k0 in range(0, n, config.block_size):
        k1 = min(k0 + config.block_size, n)
        e0, e1 = max(0, k0 - before), min(n, k1 + after)
        core = slice(k0 - e0, k1 - e0)
        y_ext = {}
        for i, u in enumerate(units):
            if planner.needs_extension(i):
                y_ext[i] = u.bf.output(e0, e1)
            else:
                y = np.zeros((2, e1 - e0), dtype=complex)
                y[:, core] = u.bf.output(k0, k1)
                y_ext[i] = y
        z_ext = {i: units[i].one_tap[:, None] * y for i, y in y_ext.items()}
        phases = planner(z_ext, core, k0, k1)
        for i, u in enumerate(units):
            y = y_ext[i][:, core]
            watches[i].check(y, f"channel {i} block {k0 // config.block_size}")
            theta = phases[i]
            rot = np.exp(1j * theta)
            z = z_ext[i][:, core]
            r = z / rot
            e_z = (constellation.slice(r) - r) * rot
            e_y = np.conj(u.one_tap)[:, None] * e_z
            if u.one_tap_mask.any():
                upd = one_step * np.sum(e_z * np.conj(y), axis=1)
                u.one_tap = u.one_tap + np.where(u.one_tap_mask, upd, 0)
            u.bf.update(k0, k1, e_y, step)
            u.symbols[:, k0:k1] = r
            u.phase[:, k0:k1] = theta
            u.block_residual.append(u.lock_residual(r))


def equalize_dd(x: np.ndarray, config: DspConfig, constellation: Constellation,
                taps: Optional[np.ndarray] = None, planner=None,
                counter: Optional[OpCounter] = None) -> Unit:
    """Decision-directed equalization of one dual-polarization 2-sps signal.

    ``taps`` are the pre-converged taps (e.g. from :func:`cma_preconverge`). The
    default planner runs single-stream BPS per polarization.
    """
    unit = Unit(Butterfly(x, config.eq_taps, taps))
    if planner is None:
        planner = IndependentPlanner(config, constellation, counter or OpCounter())
    run_dd([unit], planner, config, constellation)
    return unit
