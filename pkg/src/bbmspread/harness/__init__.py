"""Configuration, scenario presets, reports, acceptance checks and the CLI."""
from .config import ConfigError, SimConfig, emit_config, from_dict, load_config
from .report import Criterion, Report, emit_report, run_scenario

__all__ = ["ConfigError", "SimConfig", "emit_config", "from_dict", "load_config",
           "Criterion", "Report", "emit_report", "run_scenario"]
