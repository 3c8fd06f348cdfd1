"""Configuration management for the simulator.

Settings come from three layers, later ones winning:

1. model defaults below,
2. a flat ``key=value`` file passed with ``--config`` (parsed with
   ``dotenv_values``, so ``#`` comments and quoting work as in ``.env``),
3. explicit overrides from the command line.

Environment variables (``RLVM_THREADS``, ``RLVM_LOG_LEVEL``) are read via
python-dotenv, so a local ``.env`` file works too.
"""

import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import UsageError

METHODS = ("lr-mmt-random", "lr-mmt-ff", "lr-mmt-pabfd", "rl-pabfd")


class ClusterConfig(BaseModel):
    """Host fleet and SLAV penalty settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    count: Optional[int] = Field(default=None, gt=0)
    capacity_mhz: float = Field(default=11704.0, gt=0)
    # None means 0.3 x capacity per slot
    base_power: Optional[float] = Field(default=None, ge=0)
    bandwidth_kbps: float = Field(default=100_000.0, gt=0)
    initial_fill: float = Field(default=0.7, gt=0, le=1)
    sizing_target: float = Field(default=0.7, gt=0, le=1)
    slav_penalty_ratio: float = Field(default=0.5, ge=0, le=1)

    @property
    def effective_base_power(self) -> float:
        if self.base_power is None:
            return 0.3 * self.capacity_mhz
        return self.base_power


class DetectionConfig(BaseModel):
    """Local-regression overload detector parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    window: int = Field(default=10, ge=3)
    safety: float = Field(default=1.2, ge=1.0)


class PPOConfig(BaseModel):
    """PPO hyperparameters for the VM-selection agent."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(default=0.99, gt=0, lt=1)
    clip_eps: float = Field(default=0.2, gt=0, lt=1)
    gae_lambda: float = Field(default=0.95, ge=0, le=1)
    learning_rate: float = Field(default=3e-4, gt=0)
    value_learning_rate: float = Field(default=1e-3, gt=0)
    epochs_per_update: int = Field(default=4, gt=0)
    minibatch_size: int = Field(default=256, gt=0)
    rollout_episodes: int = Field(default=2, gt=0)
    # None: mean per-slot EC of the first (untrained) rollout
    reward_scale: Optional[float] = Field(default=None, gt=0)
    entropy_coef: float = Field(default=0.01, ge=0)
    max_grad_norm: float = Field(default=0.5, gt=0)
    policy_hidden: Tuple[int, ...] = (32, 32)
    value_hidden: Tuple[int, ...] = (32,)
    init_logit_bias: float = -3.0
    iterations: int = Field(default=200, gt=0)
    parallel: bool = False
    seed: int = Field(default=0, ge=0)

    @field_validator("policy_hidden", "value_hidden")
    @classmethod
    def _positive_layers(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(width <= 0 for width in value):
            raise ValueError("hidden layer widths must be positive and non-empty")
        return value


class SimulationConfig(BaseModel):
    """Aggregate configuration for one experiment."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)
    ppo: PPOConfig = Field(default_factory=PPOConfig)
    detector: Literal["lr"] = "lr"
    selector: Literal["mmt"] = "mmt"
    placer: Literal["random", "ff", "pabfd"] = "pabfd"
    seed: int = Field(default=0, ge=0)
    threads: int = Field(
        default_factory=lambda: os.getenv("RLVM_THREADS") or 1, ge=1, validate_default=True
    )
    log_level: str = Field(default_factory=lambda: os.getenv("RLVM_LOG_LEVEL", "INFO"))


# flat file key -> (section, field)
_FLAT_KEYS: Dict[str, Tuple[Optional[str], str]] = {
    "hosts.count": ("cluster", "count"),
    "hosts.capacity_mhz": ("cluster", "capacity_mhz"),
    "hosts.base_power": ("cluster", "base_power"),
    "hosts.bandwidth_kbps": ("cluster", "bandwidth_kbps"),
    "hosts.initial_fill": ("cluster", "initial_fill"),
    "hosts.sizing_target": ("cluster", "sizing_target"),
    "slav.penalty_ratio": ("cluster", "slav_penalty_ratio"),
    "lr.window": ("detection", "window"),
    "lr.safety": ("detection", "safety"),
    "sim.seed": (None, "seed"),
    "detector": (None, "detector"),
    "selector": (None, "selector"),
    "placer": (None, "placer"),
    "train.parallel": ("ppo", "parallel"),
    "train.iterations": ("ppo", "iterations"),
}
for _name in PPOConfig.model_fields:
    _FLAT_KEYS.setdefault(f"ppo.{_name}", ("ppo", _name))


def _coerce(field: str, value: Any) -> Any:
    """Turn flat-file strings into tuples for comma-separated layer widths."""
    if field.endswith("_hidden") and isinstance(value, str):
        return tuple(int(part) for part in value.split(",") if part.strip())
    return value


def nest_flat(values: Mapping[str, Any]) -> Dict[str, Any]:
    """Map flat ``section.key`` entries onto the nested model layout."""
    nested: Dict[str, Any] = {"cluster": {}, "detection": {}, "ppo": {}}
    for key, raw in values.items():
        if raw is None or raw == "":
            continue
        if key not in _FLAT_KEYS:
            raise UsageError(f"Unknown config key: {key}")
        section, field = _FLAT_KEYS[key]
        if section is None:
            nested[field] = _coerce(field, raw)
        else:
            nested[section][field] = _coerce(field, raw)
    return nested


def read_flat_config(path: str) -> Dict[str, Optional[str]]:
    """Read a flat key-value config file."""
    config_path = Path(path)
    if not config_path.is_file():
        raise UsageError(f"Config file not found: {path}")
    return dict(dotenv_values(config_path))


def get_config(
    path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None
) -> SimulationConfig:
    """Build the simulation configuration.

    Args:
        path: Optional flat key-value config file
        overrides: Flat-key overrides applied after the file (e.g. from CLI flags)

    Returns:
        Validated SimulationConfig
    """
    load_dotenv()
    flat: Dict[str, Any] = {}
    if path:
        flat.update(read_flat_config(path))
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimulationConfig(**nest_flat(flat))
    except (ValidationError, ValueError) as exc:
        raise UsageError(f"Invalid configuration: {exc}") from exc


def validate_config(config: SimulationConfig, method: str) -> None:
    """Validate that a configuration can run ``method``."""
    if method not in METHODS:
        raise UsageError(f"Unknown method '{method}'. Choose from: {', '.join(METHODS)}")
