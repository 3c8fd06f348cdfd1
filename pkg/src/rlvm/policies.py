"""Baseline consolidation strategies.

Three interchangeable stages, composed by :func:`baseline_step`:

- detection: local regression (LR) over a host's utilization history,
- selection: minimum migration time (MMT) on every flagged host,
- placement: Random, First Fit (FF) or power-aware best fit (PABFD).

The placers are also used by the RL agent, which replaces detection and
selection with a learned policy.
"""

import logging
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .cluster import ClusterState, MigrationSet, Placer, PlacementProblem, vm_energy
from .config import DetectionConfig, SimulationConfig
from .errors import UsageError
from .rng import make_rng, stable_choice

logger = logging.getLogger(__name__)

Detector = Callable[[Sequence[float]], Tuple[float, bool]]

PLACERS = ("random", "ff", "pabfd")
COMBOS = {
    "lr-mmt-random": "random",
    "lr-mmt-ff": "ff",
    "lr-mmt-pabfd": "pabfd",
}


def tricube_weights(n: int) -> np.ndarray:
    """Tricube weights w_k = (1 - ((n - k) / n)^3)^3 for k = 1..n; the newest point weighs 1."""
    k = np.arange(1, n + 1, dtype=float)
    return (1.0 - ((n - k) / n) ** 3) ** 3


def lr_overload_predict(history: Sequence[float], cfg: DetectionConfig) -> Tuple[float, bool]:
    """Predict the next utilization with tricube-weighted linear regression.

    Fits a line over the last ``cfg.window`` points and extrapolates one
    step; the host is overloaded when ``safety * prediction >= 1``. With fewer
    points than the window, falls back to a static threshold on the last
    value (``last >= 1 / safety``).

    Args:
        history: Normalized utilizations, oldest first
        cfg: Window and safety parameter

    Returns:
        (predicted next utilization, overloaded flag)
    """
    values = np.asarray(history, dtype=float)
    if values.size == 0:
        return 0.0, False
    if values.size < cfg.window:
        last = float(values[-1])
        return last, last >= 1.0 / cfg.safety

    recent = values[-cfg.window :]
    n = recent.size
    x = np.arange(1, n + 1, dtype=float)
    # polyfit weights multiply residuals, so pass sqrt of the regression weights
    slope, intercept = np.polyfit(x, recent, 1, w=np.sqrt(tricube_weights(n)))
    predicted = float(slope * (n + 1) + intercept)
    return predicted, cfg.safety * predicted >= 1.0


def make_detector(cfg: DetectionConfig) -> Detector:
    """Bind detection parameters, returning ``history -> (prediction, flag)``."""
    return lambda history: lr_overload_predict(history, cfg)


def mmt_select(state: ClusterState, j: int, detector: Detector) -> List[str]:
    """Pick VMs off host ``j`` by minimum migration time until it is no longer flagged.

    Migration time is ``ram_usage / bandwidth_kbps`` of the source host at
    the observed slot; ties go to the smaller vm_id. After every pick the
    detector is re-run with the reduced utilization in place of the latest
    history point.

    Returns:
        Selected vm_ids in pick order; empty (with a warning) if the host
        was not flagged in the first place.
    """
    history = list(state.observed_history(j))
    _, flagged = detector(history)
    if not flagged:
        logger.warning(f"slot {state.slot}: MMT called on host {j}, which is not flagged")
        return []

    t = state.observed_slot
    host = state.hosts[j]
    remaining = list(state.placement.members(j))
    load = state.host_load(j, t)
    picked: List[str] = []
    while remaining and flagged:
        vm_id = min(
            remaining,
            key=lambda v: (state.profile(v).ram_usage[t] / host.bandwidth_kbps, v),
        )
        remaining.remove(vm_id)
        picked.append(vm_id)
        load -= vm_energy(state.profile(vm_id), t)
        history[-1] = max(load, 0.0) / host.capacity_mhz
        _, flagged = detector(history)
    return picked


def _place(problem: PlacementProblem, choose: Callable[[List[int], float, List[int]], int]) -> Dict[str, int]:
    """Sequential placement: each VM sees the loads committed before it.

    A VM keeps its share on its source until it has a destination.
    """
    loads = list(problem.loads)
    occupancy = list(problem.occupancy)
    allocation: Dict[str, int] = {}
    for vm_id, source, ec in problem.vms:
        candidates = [
            j for j in range(len(problem.hosts)) if problem.feasible(j, source, ec, loads)
        ]
        if not candidates:
            logger.debug(f"slot {problem.slot}: no feasible host for {vm_id}")
            continue
        target = choose(candidates, ec, occupancy)
        loads[target] += ec
        occupancy[target] += 1
        loads[source] -= ec
        occupancy[source] -= 1
        allocation[vm_id] = target
    return allocation


def pabfd_place(problem: PlacementProblem) -> Dict[str, int]:
    """Power-aware best fit: the feasible host with the least power increase.

    A host is feasible when it is not the VM's source and stays below
    capacity with the VM added. Power increase is the VM's energy, plus
    the base power when the host is currently empty; ties go to the lowest
    host index. VMs without a feasible host are left out of the result.
    """
    return _place(
        problem,
        lambda candidates, ec, occupancy: min(
            candidates, key=lambda j: (problem.estimate_power(j, ec, occupancy), j)
        ),
    )


def ff_place(problem: PlacementProblem) -> Dict[str, int]:
    """First feasible host in index order."""
    return _place(problem, lambda candidates, ec, occupancy: candidates[0])


def random_place(problem: PlacementProblem, seed: int) -> Dict[str, int]:
    """Uniformly random feasible host, drawn from a generator keyed by ``seed``."""
    rng = make_rng(seed)
    return _place(problem, lambda candidates, ec, occupancy: stable_choice(rng, candidates))


def make_placer(name: str, seed: int = 0) -> Placer:
    """Return the placer called ``name``; Random draws per slot from (seed, slot)."""
    if name == "pabfd":
        return pabfd_place
    if name == "ff":
        return ff_place
    if name == "random":
        return lambda problem: random_place(problem, _slot_seed(seed, problem.slot))
    raise UsageError(f"Unknown placer '{name}'. Choose from: {', '.join(PLACERS)}")


def _slot_seed(seed: int, slot: int) -> int:
    return int(make_rng(seed, slot).integers(2**63))


def baseline_step(
    state: ClusterState, combo: str, config: SimulationConfig, seed: int = 0
) -> Tuple[MigrationSet, Placer]:
    """One decision of an LR-MMT-{Random,FF,PABFD} stack.

    Runs LR on every host, MMT on each flagged host (in host order) and
    returns the migration set together with the combo's placer.
    """
    if combo not in COMBOS:
        raise UsageError(f"Unknown baseline '{combo}'. Choose from: {', '.join(COMBOS)}")
    detector = make_detector(config.detection)
    entries: List[Tuple[str, int]] = []
    for j in range(state.host_count):
        if not state.placement.is_active(j):
            continue
        _, flagged = detector(state.observed_history(j))
        if flagged:
            entries.extend((vm_id, j) for vm_id in mmt_select(state, j, detector))
    if entries:
        logger.debug(f"slot {state.slot}: {combo} selected {len(entries)} VM(s)")
    return MigrationSet(tuple(entries)), make_placer(COMBOS[combo], seed)
