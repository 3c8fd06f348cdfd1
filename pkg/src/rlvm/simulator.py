"""Episode driver for the baseline stacks and RL-PABFD."""

import logging
from dataclasses import dataclass
from typing import List, Optional

from .agent import PolicyParams, rl_step
from .cluster import ClusterState, SlotAccounting, advance_slot, new_state
from .config import METHODS, SimulationConfig, validate_config
from .errors import UsageError
from .metrics import EpisodeMetrics, summarize
from .policies import COMBOS, baseline_step, pabfd_place
from .trace import RequestSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeResult:
    method: str
    request: str
    seed: int
    host_count: int
    accounting: List[SlotAccounting]
    metrics: EpisodeMetrics
    selected_per_slot: float


def new_episode(request: RequestSet, config: SimulationConfig) -> ClusterState:
    """Slot-0 state of an episode on ``request``."""
    return new_state(request, config.cluster)


def run_episode(
    request: RequestSet,
    config: SimulationConfig,
    method: str,
    seed: int = 0,
    params: Optional[PolicyParams] = None,
) -> EpisodeResult:
    """Simulate every slot of ``request`` with ``method``.

    Args:
        request: Workload to replay
        config: Cluster, detection and PPO settings
        method: One of lr-mmt-random, lr-mmt-ff, lr-mmt-pabfd, rl-pabfd
        seed: Seed for the Random placer
        params: Trained policy, required for rl-pabfd

    Raises:
        UsageError: unknown method, or rl-pabfd without a policy
        SimulationError: a constraint breach during the episode
    """
    validate_config(config, method)
    if method == "rl-pabfd" and params is None:
        raise UsageError("rl-pabfd needs a trained policy (--model or --train)")

    state = new_episode(request, config)
    accounting: List[SlotAccounting] = []
    selected = 0
    while not state.is_terminal:
        if method in COMBOS:
            mig, placer = baseline_step(state, method, config, seed)
        else:
            mig, placer = rl_step(params, state, config.detection), pabfd_place
        selected += len(mig)
        state, slot = advance_slot(state, mig, placer)
        accounting.append(slot)

    metrics = summarize(accounting, request, state.host_count)
    logger.info(
        f"{method} on {request.name} (seed {seed}): EC {metrics.total_ec:.1f}, "
        f"SLAV {metrics.slav:.3g}, migrations {metrics.migrations}"
    )
    if metrics.failed_placements:
        logger.warning(f"{method}: {metrics.failed_placements} selected VM(s) could not be placed")
    return EpisodeResult(
        method=method,
        request=request.name,
        seed=seed,
        host_count=state.host_count,
        accounting=accounting,
        metrics=metrics,
        selected_per_slot=selected / max(len(accounting), 1),
    )


__all__ = ["EpisodeResult", "METHODS", "new_episode", "run_episode"]
