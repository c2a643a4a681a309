"""Simulation engine: scenario configs, the stepping kernel and trajectory logs."""

from .config import ConfigError, RingGeometry, ScenarioConfig, StretchGeometry, load_config, ring_for_speed
from .engine import RunResult, Simulation, VehicleState, fail_safe, run, step
from .kernel import BACKEND
from .log import TrajectoryLog

__all__ = ["BACKEND", "ConfigError", "RingGeometry", "RunResult", "ScenarioConfig", "Simulation", "StretchGeometry",
           "TrajectoryLog", "VehicleState", "fail_safe", "load_config", "ring_for_speed", "run", "step"]
