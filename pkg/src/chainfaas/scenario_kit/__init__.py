"""Requirement matrix, scenario configs, the scenario runner and cost comparison."""

from .config import ScenarioConfig, parse_config, validate_scenario_config
from .requirements import (
    REQUIREMENT_IDS,
    Capability,
    Requirement,
    ScenarioId,
    format_matrix,
    matrix_rows,
    required_capabilities,
    requirements,
)
from .runner import DEFAULT_PRICING, ScenarioRun, build_scenario, cost_report, run_scenario

__all__ = [
    "REQUIREMENT_IDS", "Capability", "Requirement", "ScenarioId", "format_matrix",
    "matrix_rows", "required_capabilities", "requirements", "ScenarioConfig", "parse_config",
    "validate_scenario_config", "DEFAULT_PRICING", "ScenarioRun", "build_scenario",
    "cost_report", "run_scenario",
]
