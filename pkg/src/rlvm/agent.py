"""Learned VM-selection policy (RL-PABFD).

Each slot the policy looks at every VM and decides independently whether
to migrate it: a shared MLP maps the VM's 7 features to a logit, and the
joint action is a product of Bernoullis. Selected VMs are handed to PABFD.
No explicit overload detection happens; the forecast is just a feature.

Features per VM (all dimensionless):

    0  usage / d_vm
    1  usage / host capacity
    2  ram_usage / ram_demand
    3  host utilization
    4  host predicted next utilization (LR forecast)
    5  host overload rate (share of past slots in SLAV)
    6  VMs on host / VMs in request
"""

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np

from .cluster import ClusterState, MigrationSet
from .config import DetectionConfig, PPOConfig
from .errors import ModelFormatError
from .network import MLP, Adam
from .policies import lr_overload_predict
from .rng import make_rng
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

FEATURE_DIM = 7
POOLED_DIM = 2 * FEATURE_DIM
MODEL_HEADER = "rlvm-policy v1"


def encode_state(state: ClusterState, detection: Optional[DetectionConfig] = None) -> np.ndarray:
    """Feature matrix with one row per VM, in ascending vm_id order.

    Usage-based features come from ``state.observed_slot``, the latest slot
    monitoring has reported, the same view the LR detector gets.
    """
    detection = detection or DetectionConfig()
    vm_ids = state.request.vm_ids
    features = np.zeros((len(vm_ids), FEATURE_DIM))
    if not vm_ids:
        return features

    t = state.observed_slot
    host_rows = []
    for j, host in enumerate(state.hosts):
        utilization = state.utilization(j, t)
        predicted, _ = lr_overload_predict(state.observed_history(j), detection)
        overload_rate = state.overload_slots[j] / state.slot if state.slot > 0 else 0.0
        share = len(state.placement.members(j)) / len(vm_ids)
        host_rows.append((host.capacity_mhz, utilization, predicted, overload_rate, share))

    for row, vm_id in enumerate(vm_ids):
        profile = state.profile(vm_id)
        capacity, utilization, predicted, overload_rate, share = host_rows[
            state.placement.host_of(vm_id)
        ]
        usage = profile.cpu_usage[t]
        ram_share = profile.ram_usage[t] / profile.ram_demand_kb if profile.ram_demand_kb > 0 else 0.0
        features[row] = (
            usage / profile.d_vm,
            usage / capacity,
            ram_share,
            utilization,
            predicted,
            overload_rate,
            share,
        )
    return features


def pool_features(features: np.ndarray) -> np.ndarray:
    """Cluster summary for the value network: per-feature mean and max over VMs."""
    if features.shape[0] == 0:
        return np.zeros(POOLED_DIM)
    return np.concatenate([features.mean(axis=0), features.max(axis=0)])


@dataclass
class PolicyParams:
    """Policy (theta) and value (phi) networks with their optimizer state."""

    policy: MLP
    value: MLP
    policy_opt: Adam = field(default_factory=lambda: Adam(3e-4))
    value_opt: Adam = field(default_factory=lambda: Adam(1e-3))
    iteration: int = 0
    reward_scale: Optional[float] = None

    @classmethod
    def init(cls, cfg: PPOConfig, seed: Optional[int] = None) -> "PolicyParams":
        rng = make_rng(cfg.seed if seed is None else seed, 0)
        policy = MLP.init(
            (FEATURE_DIM, *cfg.policy_hidden, 1), rng, output_bias=cfg.init_logit_bias
        )
        value = MLP.init((POOLED_DIM, *cfg.value_hidden, 1), rng)
        return cls(
            policy=policy,
            value=value,
            policy_opt=Adam(cfg.learning_rate),
            value_opt=Adam(cfg.value_learning_rate),
            reward_scale=cfg.reward_scale,
        )

    def copy(self) -> "PolicyParams":
        return copy.deepcopy(self)

    def is_finite(self) -> bool:
        return self.policy.is_finite() and self.value.is_finite()

    def logits(self, features: np.ndarray) -> np.ndarray:
        if features.shape[0] == 0:
            return np.zeros(0)
        return self.policy(features)[:, 0]

    def state_value(self, pooled: np.ndarray) -> float:
        return float(self.value(pooled)[0, 0])


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def bernoulli_log_prob(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-VM log-mass of the taken actions: a log p + (1 - a) log(1 - p)."""
    a = np.asarray(actions, dtype=float)
    return a * log_sigmoid(logits) + (1.0 - a) * log_sigmoid(-logits)


def bernoulli_entropy(logits: np.ndarray) -> np.ndarray:
    p = np.exp(log_sigmoid(logits))
    return -(p * log_sigmoid(logits) + (1.0 - p) * log_sigmoid(-logits))


def select_action(
    params: PolicyParams,
    features: np.ndarray,
    mode: Literal["sample", "greedy"] = "greedy",
    seed: int | np.random.Generator | None = None,
) -> Tuple[np.ndarray, float]:
    """Choose the VMs to migrate.

    Args:
        params: Policy parameters
        features: Output of :func:`encode_state`
        mode: ``sample`` draws independent Bernoullis, ``greedy`` takes p > 0.5
        seed: Seed or generator for ``sample``

    Returns:
        (boolean mask over VMs, joint log-probability of the mask)
    """
    logits = params.logits(features)
    probs = np.exp(log_sigmoid(logits))
    if mode == "greedy":
        actions = probs > 0.5
    elif mode == "sample":
        rng = seed if isinstance(seed, np.random.Generator) else make_rng(0 if seed is None else seed)
        actions = rng.random(logits.shape[0]) < probs
    else:
        raise ValueError(f"unknown action mode '{mode}'")
    return actions, float(np.sum(bernoulli_log_prob(logits, actions)))


def mask_to_migration(state: ClusterState, actions: np.ndarray) -> MigrationSet:
    """Selected VMs (ascending vm_id) with their current hosts as sources."""
    vm_ids = state.request.vm_ids
    return MigrationSet.from_vms(state.placement, [vm_ids[i] for i in np.flatnonzero(actions)])


def rl_step(
    params: PolicyParams, state: ClusterState, detection: Optional[DetectionConfig] = None
) -> MigrationSet:
    """Greedy selection for evaluation; combine with PABFD in ``advance_slot``."""
    features = encode_state(state, detection)
    actions, _ = select_action(params, features, mode="greedy")
    return mask_to_migration(state, actions)


def _format_array(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values.ravel())


def save_params(params: PolicyParams, path: str | Path) -> Path:
    """Write the text model container (weights row-major, shortest round-trip decimals)."""
    lines = [
        MODEL_HEADER,
        f"iteration {params.iteration}",
        f"reward_scale {'none' if params.reward_scale is None else repr(float(params.reward_scale))}",
        "policy " + " ".join(str(s) for s in params.policy.sizes),
        "value " + " ".join(str(s) for s in params.value.sizes),
    ]
    for name, network in (("policy", params.policy), ("value", params.value)):
        for index, (w, b) in enumerate(zip(network.weights, network.biases)):
            lines.append(f"{name}.W{index} {_format_array(w)}")
            lines.append(f"{name}.b{index} {_format_array(b)}")
    return atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_sizes(line: str, name: str) -> Tuple[int, ...]:
    parts = line.split()
    if not parts or parts[0] != name:
        raise ModelFormatError(f"expected '{name}' layer sizes, got '{line[:40]}'")
    try:
        sizes = tuple(int(p) for p in parts[1:])
    except ValueError:
        raise ModelFormatError(f"bad layer sizes for {name}") from None
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ModelFormatError(f"bad layer sizes for {name}: {sizes}")
    return sizes


def _read_network(lines: List[str], cursor: int, name: str, sizes: Tuple[int, ...]) -> Tuple[MLP, int]:
    weights, biases = [], []
    for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        arrays = []
        for label, shape in ((f"{name}.W{index}", (fan_in, fan_out)), (f"{name}.b{index}", (fan_out,))):
            if cursor >= len(lines):
                raise ModelFormatError(f"model file ends before {label}")
            parts = lines[cursor].split()
            cursor += 1
            if not parts or parts[0] != label:
                raise ModelFormatError(f"expected {label}")
            try:
                values = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise ModelFormatError(f"non-numeric weight in {label}") from None
            if values.size != int(np.prod(shape)):
                raise ModelFormatError(f"{label}: expected {int(np.prod(shape))} values, got {values.size}")
            if not np.all(np.isfinite(values)):
                raise ModelFormatError(f"{label}: non-finite weight")
            arrays.append(values.reshape(shape))
        weights.append(arrays[0])
        biases.append(arrays[1])
    return MLP(weights, biases), cursor


def load_params(path: str | Path, cfg: Optional[PPOConfig] = None) -> PolicyParams:
    """Read a model file written by :func:`save_params`.

    With ``cfg`` the layer shapes must match the configured architecture;
    optimizers start fresh at the configured learning rates.

    Raises:
        ModelFormatError: missing file, wrong header, bad shapes or values
    """
    model_path = Path(path)
    if not model_path.is_file():
        raise ModelFormatError(f"Model file not found: {path}")
    try:
        text = model_path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ModelFormatError(f"{path}: not a text model file") from None
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != MODEL_HEADER:
        raise ModelFormatError(f"{path}: missing '{MODEL_HEADER}' header")
    if len(lines) < 5:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        iteration = int(lines[1].split()[1])
        raw_scale = lines[2].split()[1]
        reward_scale = None if raw_scale == "none" else float(raw_scale)
    except (IndexError, ValueError):
        raise ModelFormatError(f"{path}: bad iteration or reward_scale line") from None

    policy_sizes = _parse_sizes(lines[3], "policy")
    value_sizes = _parse_sizes(lines[4], "value")
    if policy_sizes[0] != FEATURE_DIM or policy_sizes[-1] != 1:
        raise ModelFormatError(f"policy network must map {FEATURE_DIM} -> 1, got {policy_sizes}")
    if value_sizes[0] != POOLED_DIM or value_sizes[-1] != 1:
        raise ModelFormatError(f"value network must map {POOLED_DIM} -> 1, got {value_sizes}")
    if cfg is not None:
        if policy_sizes[1:-1] != tuple(cfg.policy_hidden) or value_sizes[1:-1] != tuple(cfg.value_hidden):
            raise ModelFormatError(
                f"{path}: hidden layers {policy_sizes[1:-1]}/{value_sizes[1:-1]} differ from "
                f"configured {tuple(cfg.policy_hidden)}/{tuple(cfg.value_hidden)}"
            )

    policy, cursor = _read_network(lines, 5, "policy", policy_sizes)
    value, cursor = _read_network(lines, cursor, "value", value_sizes)
    if cursor != len(lines):
        raise ModelFormatError(f"{path}: unexpected trailing content")

    cfg = cfg or PPOConfig()
    logger.debug(f"Loaded policy from {path} (iteration {iteration})")
    return PolicyParams(
        policy=policy,
        value=value,
        policy_opt=Adam(cfg.learning_rate),
        value_opt=Adam(cfg.value_learning_rate),
        iteration=iteration,
        reward_scale=reward_scale,
    )
