"""Scenario harness: seeded in-process deployments, attack scenarios and benchmarks."""

from aegon.harness.scenarios import (
    SCENARIOS,
    ScenarioResult,
    run_scenario,
    scenario_names,
)
from aegon.harness.world import World

__all__ = ["SCENARIOS", "ScenarioResult", "World", "run_scenario", "scenario_names"]
