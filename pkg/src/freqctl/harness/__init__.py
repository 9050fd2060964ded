"""Case and scenario files, closed-loop runs, metrics and the command line."""

from .case import Case, load_case, write_case
from .runner import RunMetrics, compare, compute_metrics, run_scenario, tune_vsm
from .scenario import ScenarioSpec, load_scenario, parse_scenario

__all__ = ["Case", "RunMetrics", "ScenarioSpec", "compare", "compute_metrics", "load_case",
           "load_scenario", "parse_scenario", "run_scenario", "tune_vsm", "write_case"]
