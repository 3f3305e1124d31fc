"""Scenario files: TOML sections validated into typed, hashable settings.

Every physical quantity carries its unit in the key name (``baud_gbd``,
``length_km``, ...). Unknown keys are rejected so typos cannot silently fall
back to defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..combsim import CombSpec
from ..errors import ConfigError
from ..linksim import FiberSpec, NlProxySpec
from ..rxdsp import DspConfig

MODES = ("independent", "master_slave", "joint")


class ScenarioError(ConfigError):
    """Scenario failed validation; ``fields`` lists the offending keys."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        self.fields = [f for f, _ in problems]
        super().__init__("; ".join(f"{f}: {msg}" for f, msg in problems))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RunSection(_Section):
    seed: int = 1
    n_symbols: int = Field(131072, ge=1024)
    output_dir: str = "results"
    threads: int = Field(1, ge=1)
    dump_waveforms: bool = False


class CombSection(_Section):
    center_offset_mhz: float = 0.0
    spacing_ghz: float = Field(25.0, gt=0)
    spacing_offset_khz: float = 0.0
    linewidth_khz: float = Field(50.0, ge=0)
    jitter_linewidth_khz: float = Field(0.0, ge=0)
    n_lines: int = Field(25, ge=1)

    def to_spec(self) -> CombSpec:
        return CombSpec(
            nu0=self.center_offset_mhz * 1e6,
            f_spacing=self.spacing_ghz * 1e9 + self.spacing_offset_khz * 1e3,
            linewidth0=self.linewidth_khz * 1e3,
            jitter_linewidth=self.jitter_linewidth_khz * 1e3,
            n_lines=self.n_lines,
        )


class ChannelSection(_Section):
    lines: list[int] = [0, 1]
    baud_gbd: float = Field(20.0, gt=0)
    rolloff: float = Field(0.05, gt=0, le=1)
    tx_sps: int = Field(2, ge=2)
    modulation_order: Literal[4, 16, 64, 256] = 64
    preamble_symbols: int = Field(1024, ge=64)


class FiberSection(_Section):
    length_km: float = Field(0.0, ge=0)
    dispersion_ps_nm_km: float = 16.5
    ref_wavelength_nm: float = Field(1550.0, gt=0)

    def to_spec(self) -> FiberSpec:
        return FiberSpec(self.length_km, self.dispersion_ps_nm_km, self.ref_wavelength_nm)


class LinkSection(_Section):
    launch_power_dbm: float = 0.0
    snr_db: float = 20.0
    snr_ref_power_dbm: float = 0.0
    snr_tracks_power: bool = True
    rx_skew_ps: float = 0.0
    adc_rate_gsps: Optional[float] = Field(None, gt=0)
    rx_bandwidth_ghz: Optional[float] = Field(None, gt=0)
    adc_enob: Optional[float] = Field(None, gt=0)

    def snr_at(self, launch_power_dbm: float) -> float:
        """In-band SNR at the given launch power (amplifier-noise limited link)."""
        if not self.snr_tracks_power:
            return self.snr_db
        return self.snr_db + (launch_power_dbm - self.snr_ref_power_dbm)


class NlProxySection(_Section):
    enabled: bool = False
    variance_at_ref_rad2: float = Field(0.0, ge=0)
    correlation_time_ns: float = Field(1.0, gt=0)
    power_exponent: float = 2.0
    inter_channel_corr: float = Field(1.0, ge=0, le=1)
    decorrelation_delay_ps: float = 0.0
    ref_power_dbm: float = 0.0

    def to_spec(self) -> NlProxySpec:
        tau = self.correlation_time_ns * 1e-9
        return NlProxySpec(
            base_variance_rate=self.variance_at_ref_rad2 / tau,
            correlation_time=tau,
            power_exponent=self.power_exponent,
            inter_channel_corr=self.inter_channel_corr,
            decorrelation_delay=self.decorrelation_delay_ps * 1e-12,
            ref_power_dbm=self.ref_power_dbm,
        )


class DspSection(_Section):
    modes: list[Literal["independent", "master_slave", "joint"]] = ["independent"]
    eq_taps: int = 35
    eq_step: float = 1e-4
    block_size: int = 64
    cma_preconv_symbols: int = 32768
    cma_step: float = 3e-4
    bps_test_angles: int = 32
    bps_window: int = 128
    joint_window: Optional[int] = None
    joint_group: Optional[list[tuple[int, int]]] = None
    one_tap_step: Optional[float] = None
    track_threshold: float = 0.15
    master_line: Optional[int] = None
    spacing_difference: Literal["known", "estimated", "none"] = "known"
    slave_delays_ps: Optional[list[float]] = None

    def to_config(self, preamble_symbols: int, mode: str = "independent") -> DspConfig:
        return DspConfig(
            eq_taps=self.eq_taps, eq_step=self.eq_step, block_size=self.block_size,
            cma_preconv_symbols=self.cma_preconv_symbols, cma_step=self.cma_step,
            bps_test_angles=self.bps_test_angles, bps_window=self.bps_window,
            joint_window=self.joint_window, joint_group=self.joint_group, mode=mode,
            one_tap_step=self.one_tap_step, track_threshold=self.track_threshold,
            preamble_symbols=preamble_symbols,
        )


class ExperimentSection(_Section):
    kind: Literal["single", "launch_power", "master_separation"] = "single"
    launch_powers_dbm: list[float] = []
    separations: list[int] = []
    cut_line: int = 0
    discard_symbols: int = Field(4096, ge=0)
    crosscorr_max_lag: int = Field(512, ge=1)


class Scenario(_Section):
    run: RunSection = RunSection()
    signal_comb: CombSection = CombSection()
    lo_comb: CombSection = CombSection(center_offset_mhz=50.0)
    channels: ChannelSection = ChannelSection()
    fiber: FiberSection = FiberSection()
    link: LinkSection = LinkSection()
    nl_proxy: NlProxySection = NlProxySection()
    dsp: DspSection = DspSection()
    experiment: ExperimentSection = ExperimentSection()

    @model_validator(mode="after")
    def _cross_checks(self):
        problems = []
        sig, lo = self.signal_comb.to_spec(), self.lo_comb.to_spec()
        for n in self.all_lines():
            if not (sig.has_line(n) and lo.has_line(n)):
                problems.append(f"line {n} is not present in both combs")
        if self.run.n_symbols < self.dsp.cma_preconv_symbols:
            problems.append("run.n_symbols is shorter than dsp.cma_preconv_symbols")
        if self.run.n_symbols < self.channels.preamble_symbols + self.experiment.discard_symbols:
            problems.append("run.n_symbols leaves no symbols after preamble and discard")
        if len(set(self.channels.lines)) != len(self.channels.lines):
            problems.append("channels.lines has duplicates")
        exp = self.experiment
        if exp.kind == "launch_power" and not exp.launch_powers_dbm:
            problems.append("experiment.launch_powers_dbm is empty")
        if exp.kind == "master_separation":
            if not exp.separations or 0 in exp.separations:
                problems.append("experiment.separations must be non-empty and non-zero")
        if self.dsp.master_line is not None and self.dsp.master_line not in self.channels.lines:
            problems.append("dsp.master_line is not one of channels.lines")
        try:
            self.dsp.to_config(self.channels.preamble_symbols)
        except ConfigError as exc:
            problems.append(f"dsp: {exc}")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def all_lines(self) -> list[int]:
        exp = self.experiment
        if exp.kind == "master_separation":
            return sorted({exp.cut_line, *(exp.cut_line + s for s in exp.separations)})
        return list(self.channels.lines)

    # -- identity ---------------------------------------------------------

    def canonical(self) -> dict:
        """Settings that determine results; output location and threading excluded."""
        data = self.model_dump(mode="json")
        data["run"].pop("output_dir")
        data["run"].pop("threads")
        return data

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_override(self, dotted_key: str, value) -> "Scenario":
        data = self.model_dump(mode="python")
        set_dotted(data, dotted_key, value)
        return build_scenario(data)


def set_dotted(data: dict, dotted_key: str, value) -> None:
    parts = dotted_key.split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ScenarioError([(dotted_key, "no such section")])
        node = node[p]
    if parts[-1] not in node:
        raise ScenarioError([(dotted_key, "no such key")])
    node[parts[-1]] = value


def build_scenario(data: dict) -> Scenario:
    try:
        return Scenario.model_validate(copy.deepcopy(data))
    except ValidationError as exc:
        problems = []
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"]) or "<scenario>"
            problems.append((loc, err["msg"]))
        raise ScenarioError(problems) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError([(str(path), f"not valid TOML ({exc})")]) from None
    return build_scenario(data)
