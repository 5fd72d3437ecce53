"""Closed-loop simulation of the pedestrian and slalom scenarios."""

from .batch import BatchResult, BatchSpec, parse_seeds, run_batch, run_cells
from .controllers import (
    AccController,
    ControllerSpec,
    SlalomController,
    baseline_single_hypothesis,
    make_controller,
    parse_controller,
)
from .episode import EpisodeMetrics, run_episode, unicycle_step
from .perception import Observation, oracle_perception, simulate_perception
from .scenario import ACC, SLALOM, Entity, ScenarioConfig, generate_scene

__all__ = [
    "ACC",
    "SLALOM",
    "AccController",
    "BatchResult",
    "BatchSpec",
    "ControllerSpec",
    "Entity",
    "EpisodeMetrics",
    "Observation",
    "ScenarioConfig",
    "SlalomController",
    "baseline_single_hypothesis",
    "generate_scene",
    "make_controller",
    "oracle_perception",
    "parse_seeds",
    "parse_controller",
    "run_batch",
    "run_cells",
    "run_episode",
    "simulate_perception",
    "unicycle_step",
]
