"""Slot-based cloud consolidation simulator with LR-MMT baselines and a PPO VM-selection agent."""

__version__ = "0.1.0"

from .config import SimulationConfig, get_config
from .simulator import run_episode
from .trace import read_request_file, synth_request, write_request_file

__all__ = [
    "SimulationConfig",
    "get_config",
    "run_episode",
    "read_request_file",
    "synth_request",
    "write_request_file",
]
