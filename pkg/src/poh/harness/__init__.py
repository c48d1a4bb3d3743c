"""Scenario harness: configuration, simulation runner and run reports."""

from .config import ScenarioConfig, bundled_scenarios, load_scenario
from .runner import RunResult, run_scenario

__all__ = ["ScenarioConfig", "bundled_scenarios", "load_scenario", "RunResult", "run_scenario"]
