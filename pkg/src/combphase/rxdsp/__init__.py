"""Receiver DSP chain and carrier-recovery topologies."""

from .bps import OpCounter, bps_estimate, phase_grid
from .equalizer import DspConfig, Butterfly, cma_preconverge, equalize_dd
from .foe import estimate_foe_4thpower, remove_frequency
from .frontend import (
    compensate_skew,
    estimate_skew,
    fractional_delay,
    gram_schmidt,
    matched_filter_downsample,
    normalize_power,
)
from .recovery import (
    RecoveredStream,
    RecoveryResult,
    align_to_preamble,
    estimate_spacing_difference,
    recover_independent,
    recover_joint,
    recover_master_slave,
    resolve_ambiguity,
    total_frequency,
)
