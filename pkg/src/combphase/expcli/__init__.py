"""Scenario-driven experiments: configuration, execution, outputs."""

from .runner import RunRecord, run_points, run_scenario, simulate_link
from .scenario import Scenario, ScenarioError, build_scenario, load_scenario
from .waveio import export_waveform, import_waveform
