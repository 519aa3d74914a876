from .bench import BenchResult, bench
from .scenarios import (
    ACTIONS,
    PRESETS,
    DetectionStats,
    Scenario,
    ScenarioOutcome,
    detection_trials,
    load_scenario,
    run_scenario,
    sweep,
)
from .transport import FaultModel, SimTransport

__all__ = [
    "ACTIONS",
    "BenchResult",
    "DetectionStats",
    "FaultModel",
    "PRESETS",
    "Scenario",
    "ScenarioOutcome",
    "SimTransport",
    "bench",
    "detection_trials",
    "load_scenario",
    "run_scenario",
    "sweep",
]
