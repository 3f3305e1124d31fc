"""Scenario execution: link simulation, carrier recovery, metrics and outputs.

A scenario expands into sweep points (one per launch power, master separation
or override value). Each point draws every random stream from
``(seed, point index, ...)``, so points are independent of execution order
and thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..combsim import comb_noise, synthesize_channel
from ..errors import CombPhaseError
from ..linksim import add_awgn, apply_cd, nl_phase_proxy, rx_frontend
from ..metrics import metrics_report, phase_crosscorr, phase_mse
from ..rxdsp import (
    OpCounter,
    compensate_skew,
    estimate_skew,
    estimate_spacing_difference,
    fractional_delay,
    gram_schmidt,
    matched_filter_downsample,
    recover_independent,
    recover_joint,
    recover_master_slave,
)
from ..sigcore import Constellation, Frame, PhaseTrace, map_qam, random_bits, rrc_shape
from .scenario import Scenario
from .waveio import export_waveform

CSV_COLUMNS = (
    "point", "mode", "master_separation", "group", "launch_power_dbm", "sweep_value",
    "channel", "gmi_bits_per_4d", "ngmi", "snr_db", "evm_db", "ber", "phase_mse",
    "bps_evals", "tracking_failed", "status",
)


@dataclass
class SweepPoint:
    index: int
    lines: list
    launch_power_dbm: float
    separation: Optional[int] = None
    sweep_value: Optional[str] = None
    scenario: Optional[Scenario] = None


@dataclass
class SimulatedLink:
    """Receiver-side frames plus everything the metrics need as ground truth."""
    lines: list
    frames: list          # matched-filtered, 2 samples per symbol
    bits: list            # [channel][pol] transmitted bits
    symbols: list         # [channel] (2, n) transmitted symbols
    true_phase: list      # [channel] PhaseTrace at the symbol rate
    spacing_difference_hz: float


@dataclass
class RunRecord:
    scenario_hash: str
    seed: int
    points: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    failures: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --------------------------------------------------------------------------
# sweep expansion


def expand_points(scn: Scenario) -> list[SweepPoint]:
    exp = scn.experiment
    if exp.kind == "launch_power":
        return [SweepPoint(i, list(scn.channels.lines), p, scenario=scn)
                for i, p in enumerate(exp.launch_powers_dbm)]
    if exp.kind == "master_separation":
        return [SweepPoint(i, [exp.cut_line, exp.cut_line + s], scn.link.launch_power_dbm, s,
                           scenario=scn)
                for i, s in enumerate(exp.separations)]
    return [SweepPoint(0, list(scn.channels.lines), scn.link.launch_power_dbm, scenario=scn)]


def expand_override(scn: Scenario, key: str, values: list) -> list[SweepPoint]:
    points = []
    for value in values:
        sub = scn.with_override(key, value)
        for p in expand_points(sub):
            p.index = len(points)
            p.sweep_value = str(value)
            points.append(p)
    return points


# --------------------------------------------------------------------------
# link simulation


def _walkoff(scn: Scenario, line: int) -> float:
    """Group delay of ``line`` relative to line 0 after the fiber (s)."""
    fiber = scn.fiber.to_spec()
    omega = 2 * np.pi * line * scn.signal_comb.spacing_ghz * 1e9
    return fiber.beta2 * fiber.length_m * omega


def simulate_link(scn: Scenario, lines: list, launch_power_dbm: float, seed) -> SimulatedLink:
    """Transmit, propagate and detect every channel of ``lines``.

    Comb phase and the nonlinear proxy are applied at the transmitter side of
    the dispersive fiber, which the receiver then undoes, so they reach the
    DSP undispersed. Channel walk-off shows up as a relative delay of the LO
    comb noise. Amplifier noise is added at the receiver.
    """
    ch = scn.channels
    const = Constellation.qam(ch.modulation_order)
    n, sps, rs = scn.run.n_symbols, ch.tx_sps, ch.baud_gbd * 1e9
    fs = sps * rs
    sig, lo = scn.signal_comb.to_spec(), scn.lo_comb.to_spec()
    fiber = scn.fiber.to_spec()

    bits, symbols, frames = [], [], []
    for line in lines:
        b = [random_bits(n * const.bits_per_symbol, seed, "bits", line, p) for p in range(2)]
        s = np.vstack([map_qam(bb, const) for bb in b])
        fx = rrc_shape(s[0], ch.rolloff, sps, symbol_rate=rs)
        fy = rrc_shape(s[1], ch.rolloff, sps, symbol_rate=rs)
        bits.append(b)
        symbols.append(s)
        frames.append(Frame(fx.samples_x, fy.samples_x, fs))

    nl_traces = [None] * len(lines)
    if scn.nl_proxy.enabled:
        frames, nl_traces = nl_phase_proxy(frames, launch_power_dbm, scn.nl_proxy.to_spec(),
                                           (*_seed_tuple(seed), "nl"))

    sig_noise = comb_noise(sig, n * sps, 1 / fs, seed, "signal comb")
    lo_noise = comb_noise(lo, n * sps, 1 / fs, seed, "lo comb")
    snr = scn.link.snr_at(launch_power_dbm)
    rx_frames, truths = [], []
    for c, line in enumerate(lines):
        det = synthesize_channel(sig, lo, line, frames[c], sig_noise, lo_noise,
                                 lo_delay=-_walkoff(scn, line))
        truth = det.true_phase.values
        if nl_traces[c] is not None:
            truth = truth + nl_traces[c].values
        truths.append(PhaseTrace(truth[::sps], rs))
        fr = det.frame
        if fiber.length_km > 0:
            fr = apply_cd(fr, fiber, +1)
        fr = add_awgn(fr, snr, (*_seed_tuple(seed), "awgn", line), oversampling=sps)
        if fiber.length_km > 0:
            fr = apply_cd(fr, fiber, -1)
        fr = _receiver(scn, fr, symbols[c], seed, line)
        rx_frames.append(fr)
    return SimulatedLink(lines, rx_frames, bits, symbols, truths, sig.f_spacing - lo.f_spacing)


def _seed_tuple(seed) -> tuple:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)


def _receiver(scn: Scenario, frame: Frame, symbols: np.ndarray, seed, line: int) -> Frame:
    link, ch = scn.link, scn.channels
    rs = ch.baud_gbd * 1e9
    skew = link.rx_skew_ps * 1e-12
    if skew:
        frame = frame.replace(frame.samples_x, fractional_delay(
            Frame(frame.samples_y, None, frame.sample_rate), skew).samples_x)
    if link.adc_rate_gsps or link.rx_bandwidth_ghz or link.adc_enob:
        rate = link.adc_rate_gsps * 1e9 if link.adc_rate_gsps else frame.sample_rate
        bw = link.rx_bandwidth_ghz * 1e9 if link.rx_bandwidth_ghz else None
        frame = rx_frontend(frame, rate, bw, enob=link.adc_enob,
                            seed=(*_seed_tuple(seed), "adc", line))
    frame = gram_schmidt(frame)
    if skew:
        frame = _deskew(frame, symbols[:, :ch.preamble_symbols], ch.rolloff, rs)
    return matched_filter_downsample(frame, rs, ch.rolloff, 2)


def _deskew(frame: Frame, preamble: np.ndarray, rolloff: float, rs: float) -> Frame:
    """Align Y to X using the known preamble waveform of each polarization."""
    fs = frame.sample_rate
    ref_sps = int(round(fs / rs))
    if abs(fs / rs - ref_sps) > 1e-9:
        return frame  # non-integer oversampling: leave skew to the equalizer
    n_ref = preamble.shape[1] * ref_sps
    delays = []
    for p, pol in enumerate(frame.pols):
        ref = rrc_shape(preamble[p], rolloff, ref_sps, symbol_rate=rs)
        seg = Frame(pol[:n_ref], None, fs)
        delays.append(estimate_skew(seg, ref))
    skew = delays[1] - delays[0]
    y = compensate_skew(Frame(frame.samples_y, None, fs), skew).samples_x
    return frame.replace(frame.samples_x, y)


# --------------------------------------------------------------------------
# recovery and metrics


def _spacing_for(scn: Scenario, link: SimulatedLink, cfg, const, pre, master_pos: int):
    mode = scn.dsp.spacing_difference
    if mode == "known":
        return link.spacing_difference_hz
    if mode == "none" or len(link.lines) < 2:
        return 0.0
    far = max(range(len(link.lines)), key=lambda c: abs(link.lines[c] - link.lines[master_pos]))
    ind = recover_independent([link.frames[master_pos], link.frames[far]], cfg, const,
                              [pre[master_pos], pre[far]],
                              [link.lines[master_pos], link.lines[far]])
    return estimate_spacing_difference(ind.streams[0][0], ind.streams[1][0],
                                       link.lines[master_pos], link.lines[far])


def _recover(scn: Scenario, mode: str, link: SimulatedLink, const):
    cfg = scn.dsp.to_config(scn.channels.preamble_symbols, mode)
    pre = [s[:, :scn.channels.preamble_symbols] for s in link.symbols]
    lines = link.lines
    if mode == "independent":
        return recover_independent(link.frames, cfg, const, pre, lines), list(range(len(lines)))
    master = lines.index(scn.dsp.master_line) if scn.dsp.master_line in lines else 0
    if scn.experiment.kind == "master_separation":
        master = 1  # the far line is the master, the channel under test the slave
    df = _spacing_for(scn, link, cfg, const, pre, master)
    if mode == "master_slave":
        order = [master] + [c for c in range(len(lines)) if c != master]
        delays = None
        if scn.dsp.slave_delays_ps is not None:
            delays = [d * 1e-12 for d in scn.dsp.slave_delays_ps]
        res = recover_master_slave(link.frames[master], [link.frames[c] for c in order[1:]],
                                   cfg, const, [pre[c] for c in order],
                                   [lines[c] for c in order], df, delays)
        return res, order
    order = [master] + [c for c in range(len(lines)) if c != master]
    res = recover_joint([link.frames[c] for c in order], cfg, const, [pre[c] for c in order],
                        [lines[c] for c in order], df)
    return res, order


def _channel_rows(scn, point, mode, res, order, link, const) -> tuple[list, list]:
    disc = scn.experiment.discard_symbols
    rs = scn.channels.baud_gbd * 1e9
    rows, details = [], []
    for r_idx, c in enumerate(order):
        streams = res.streams[r_idx]
        rx = [st.symbols[disc:] for st in streams]
        tx = [link.bits[c][st.source_pol][disc * const.bits_per_symbol:] for st in streams]
        rep = metrics_report(rx, tx, const)
        mses = []
        for st in streams:
            k = np.arange(len(st.symbols))
            est = st.phase_estimate.values + 2 * np.pi * st.freq_offset_hz * k / rs
            truth = link.true_phase[c].values[:len(k)]
            mses.append(phase_mse(est[disc:], truth[disc:]))
        evals = res.counter.get((r_idx, 0)) + res.counter.get((r_idx, 1))
        if mode == "joint" and r_idx == 0:
            evals += res.counter.get("joint")
        failed = bool(res.tracking_failed[r_idx])
        rows.append(_row(point, mode, link.lines[c], rep.gmi_bits_per_4d, rep.ngmi, rep.snr_db,
                         rep.evm_db, rep.ber, float(np.mean(mses)), evals, failed,
                         "tracking_failed" if failed else "ok", _group_label(scn, mode, res)))
        details.append({"line": link.lines[c], "metrics": asdict(rep),
                        "phase_mse": float(np.mean(mses)), "bps_evals": int(evals),
                        "tracking_failed": failed,
                        "freq_offset_hz": [st.freq_offset_hz for st in streams],
                        "source_pols": [st.source_pol for st in streams]})
    return rows, details


def _group_label(scn: Scenario, mode: str, res) -> str:
    if mode != "joint":
        return ""
    group = scn.dsp.joint_group
    return str(len(group) if group is not None else 2 * len(res.streams))


def _row(point: SweepPoint, mode, line, gmi, ngmi, snr, evm, ber, mse, evals, failed, status,
         group="") -> dict:
    return {
        "point": point.index, "mode": mode,
        "master_separation": "" if point.separation is None else point.separation,
        "group": group, "launch_power_dbm": point.launch_power_dbm,
        "sweep_value": point.sweep_value or "", "channel": line,
        "gmi_bits_per_4d": gmi, "ngmi": ngmi, "snr_db": snr, "evm_db": evm, "ber": ber,
        "phase_mse": mse, "bps_evals": evals, "tracking_failed": int(bool(failed)),
        "status": status,
    }


def _crosscorr(link: SimulatedLink, max_lag: int) -> Optional[dict]:
    """Correlation of the true detected phase of the first two channels."""
    if len(link.true_phase) < 2:
        return None
    res = phase_crosscorr(link.true_phase[0], link.true_phase[1], max_lag)
    return {"lag0_coefficient": res.lag0_coefficient, "half_width_s": res.half_width()}


def run_point(point: SweepPoint, seed: int, out_dir: Optional[Path] = None) -> tuple[list, dict]:
    """Simulate one sweep point and run every configured recovery mode on it."""
    scn = point.scenario
    const = Constellation.qam(scn.channels.modulation_order)
    pseed = (seed, point.index)
    link = simulate_link(scn, point.lines, point.launch_power_dbm, pseed)
    if out_dir is not None and scn.run.dump_waveforms:
        for c, line in enumerate(link.lines):
            export_waveform(link.frames[c], out_dir / f"point{point.index}_line{line}.cpwf")
    rows, info = [], {"index": point.index, "lines": point.lines,
                      "launch_power_dbm": point.launch_power_dbm,
                      "separation": point.separation, "sweep_value": point.sweep_value,
                      "modes": {}, "failures": []}
    try:
        info["phase_correlation"] = _crosscorr(link, scn.experiment.crosscorr_max_lag)
    except CombPhaseError as exc:
        info["phase_correlation"] = {"error": str(exc)}
    modes = scn.dsp.modes
    for mode in modes:
        if mode == "master_slave" and len(point.lines) < 2:
            continue
        try:
            res, order = _recover(scn, mode, link, const)
        except CombPhaseError as exc:
            info["failures"].append({"mode": mode, "error": f"{type(exc).__name__}: {exc}"})
            for line in point.lines:
                rows.append(_row(point, mode, line, *([math.nan] * 6), 0, True,
                                 type(exc).__name__))
            continue
        mode_rows, details = _channel_rows(scn, point, mode, res, order, link, const)
        if scn.experiment.kind == "master_separation":
            cut = scn.experiment.cut_line
            mode_rows = [r for r in mode_rows if r["channel"] == cut]
        rows.extend(mode_rows)
        info["modes"][mode] = {"channels": details, "bps_evals": {
            str(k): v for k, v in sorted(res.counter.bps_evals.items(), key=lambda kv: str(kv[0]))}}
    return rows, info


def format_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(rows, key=lambda r: (r["point"], r["mode"], r["channel"])):
        writer.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.9g" % v
    return str(v)


def run_points(points: list, seed: int, threads: int = 1, out_dir=None,
               scenario_hash: str = "") -> tuple[RunRecord, str]:
    """Run sweep points (possibly in parallel); returns the record and the CSV text."""
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if threads > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda p: run_point(p, seed, out), points))
    else:
        results = [run_point(p, seed, out) for p in points]
    rows = [r for res in results for r in res[0]]
    infos = sorted((res[1] for res in results), key=lambda i: i["index"])
    record = RunRecord(scenario_hash, seed, infos, time.perf_counter() - t0,
                       sum(len(i["failures"]) for i in infos)
                       + sum(1 for r in rows if r["status"] == "tracking_failed"))
    text = format_csv(rows)
    if out is not None:
        (out / "results.csv").write_text(text)
        (out / "run_record.json").write_text(record.to_json())
    return record, text


def run_scenario(scn: Scenario, out_dir=None, seed: Optional[int] = None,
                 threads: Optional[int] = None) -> tuple[RunRecord, str]:
    seed = scn.run.seed if seed is None else seed
    threads = scn.run.threads if threads is None else threads
    return run_points(expand_points(scn), seed, threads, out_dir, scn.digest())
