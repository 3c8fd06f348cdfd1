"""PPO training of the VM-selection policy.

The sample unit is a slot: one joint Bernoulli action over all VMs, whose
log-probability is the sum of the per-VM terms. Rewards are the energy
decrement of the slot: the energy the cluster would have used with no
migration minus the energy actually used after the action, divided by
``reward_scale``. Placement during training is always PABFD.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .agent import (
    PolicyParams,
    bernoulli_entropy,
    bernoulli_log_prob,
    encode_state,
    log_sigmoid,
    mask_to_migration,
    pool_features,
    select_action,
)
from .cluster import SlotAccounting, account_slot, advance_slot, new_state
from .config import PPOConfig, SimulationConfig
from .errors import IncompleteTrajectory, NonFiniteGradient, TrainingError
from .metrics import summarize
from .network import MLP, clip_by_global_norm
from .policies import pabfd_place
from .rng import make_rng
from .trace import RequestSet

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("iteration", "mean_ec", "mean_slav", "mean_migrations", "clip_frac", "entropy")


@dataclass
class Trajectory:
    """One episode of experience, one entry per slot."""

    features: List[np.ndarray] = field(default_factory=list)
    pooled: List[np.ndarray] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    status_quo_ec: List[float] = field(default_factory=list)
    realized_ec: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    accounting: List[SlotAccounting] = field(default_factory=list)
    terminal: bool = False
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.values)

    def check(self, require_samples: bool = True) -> None:
        """Raise IncompleteTrajectory unless the episode ended and all columns line up."""
        if not self.terminal:
            raise IncompleteTrajectory("trajectory has not reached the terminal slot")
        columns = {"rewards": self.rewards, "values": self.values}
        if require_samples:
            columns.update(
                features=self.features,
                pooled=self.pooled,
                actions=self.actions,
                log_probs=self.log_probs,
            )
        lengths = {name: len(column) for name, column in columns.items()}
        if len(set(lengths.values())) > 1:
            raise IncompleteTrajectory(f"inconsistent trajectory lengths: {lengths}")

    @property
    def selected_per_slot(self) -> float:
        if not self.actions:
            return 0.0
        return float(np.mean([int(np.sum(a)) for a in self.actions]))


def reward(ec_t: float, ec_next: float, scale: float) -> float:
    """Energy decrement, positive iff energy went down."""
    if not scale > 0:
        raise TrainingError(f"reward scale must be positive, got {scale}")
    return (ec_t - ec_next) / scale


def assign_rewards(traj: Trajectory, scale: float) -> Trajectory:
    traj.rewards = [reward(before, after, scale) for before, after in zip(traj.status_quo_ec, traj.realized_ec)]
    return traj


def compute_advantages(traj: Trajectory, cfg: PPOConfig) -> Trajectory:
    """GAE(gamma, lambda) advantages and value targets; the value after the last slot is 0.

    Advantages are stored unnormalized; normalization happens per update batch.
    """
    traj.check(require_samples=False)
    steps = len(traj.rewards)
    advantages = np.zeros(steps)
    gae = 0.0
    next_value = 0.0
    for t in reversed(range(steps)):
        delta = traj.rewards[t] + cfg.gamma * next_value - traj.values[t]
        gae = delta + cfg.gamma * cfg.gae_lambda * gae
        advantages[t] = gae
        next_value = traj.values[t]
    traj.advantages = advantages
    traj.returns = advantages + np.asarray(traj.values, dtype=float)
    return traj


def ppo_ratio(logp_new, logp_old) -> np.ndarray:
    """Probability ratio exp(logp_new - logp_old), elementwise."""
    new = np.asarray(logp_new, dtype=float)
    old = np.asarray(logp_old, dtype=float)
    if new.shape != old.shape:
        raise TrainingError(f"log-prob shapes differ: {new.shape} vs {old.shape}")
    return np.exp(new - old)


def clipped_objective(ratios, advantages, eps: float) -> float:
    """Mean of min(r * A, clip(r, 1 - eps, 1 + eps) * A)."""
    r = np.asarray(ratios, dtype=float)
    a = np.asarray(advantages, dtype=float)
    if r.shape != a.shape:
        raise TrainingError(f"ratios and advantages differ in shape: {r.shape} vs {a.shape}")
    if r.size == 0:
        return 0.0
    return float(np.mean(np.minimum(r * a, np.clip(r, 1.0 - eps, 1.0 + eps) * a)))


@dataclass
class Batch:
    """Flattened slots of one or more trajectories."""

    features: List[np.ndarray]
    actions: List[np.ndarray]
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    pooled: np.ndarray

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory], normalize: bool = True) -> "Batch":
        features, actions, pooled = [], [], []
        log_probs, advantages, returns = [], [], []
        for traj in trajectories:
            traj.check()
            if traj.advantages is None or traj.returns is None:
                raise IncompleteTrajectory("advantages have not been computed")
            features.extend(traj.features)
            actions.extend(traj.actions)
            pooled.extend(traj.pooled)
            log_probs.extend(traj.log_probs)
            advantages.extend(traj.advantages)
            returns.extend(traj.returns)
        adv = np.asarray(advantages, dtype=float)
        if normalize and adv.size > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        return cls(
            features=features,
            actions=actions,
            log_probs=np.asarray(log_probs, dtype=float),
            advantages=adv,
            returns=np.asarray(returns, dtype=float),
            pooled=np.asarray(pooled, dtype=float).reshape(len(pooled), -1),
        )

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, index: np.ndarray) -> "Batch":
        return Batch(
            features=[self.features[i] for i in index],
            actions=[self.actions[i] for i in index],
            log_probs=self.log_probs[index],
            advantages=self.advantages[index],
            returns=self.returns[index],
            pooled=self.pooled[index],
        )


def policy_loss_and_grad(
    policy: MLP, batch: Batch, clip_eps: float, entropy_coef: float
) -> Tuple[float, List[np.ndarray], Dict[str, float]]:
    """Negated clipped surrogate plus entropy bonus, with analytic gradients.

    loss = -(mean_s min(r_s A_s, clip(r_s) A_s) + c * mean_i H(p_i))
    """
    sizes = [f.shape[0] for f in batch.features]
    total_vms = sum(sizes)
    zero_grads = [np.zeros_like(p) for p in policy.parameters()]
    if len(batch) == 0 or total_vms == 0:
        return 0.0, zero_grads, {"ratio": 1.0, "clip_frac": 0.0, "entropy": 0.0, "objective": 0.0}

    x = np.vstack([f for f in batch.features if f.shape[0]])
    taken = np.concatenate([np.asarray(a, dtype=float) for a in batch.actions])
    out, activations = policy.forward(x)
    z = out[:, 0]
    per_vm = bernoulli_log_prob(z, taken)
    bounds = np.cumsum([0] + sizes)
    logp_new = np.array([per_vm[bounds[s] : bounds[s + 1]].sum() for s in range(len(sizes))])

    ratios = ppo_ratio(logp_new, batch.log_probs)
    adv = batch.advantages
    surrogate = ratios * adv
    clipped = np.clip(ratios, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    objective = float(np.mean(np.minimum(surrogate, clipped)))
    # the min picks the unclipped term: d/dlogp = r * A, else 0
    slot_grad = np.where(surrogate <= clipped, surrogate, 0.0) / len(sizes)

    p = np.exp(log_sigmoid(z))
    entropy = float(np.mean(bernoulli_entropy(z)))
    d_objective = np.repeat(slot_grad, sizes) * (taken - p)
    d_entropy = -z * p * (1.0 - p) / total_vms
    grad_z = -(d_objective + entropy_coef * d_entropy)

    grads = policy.backward(activations, grad_z[:, None])
    stats = {
        "ratio": float(np.mean(ratios)),
        "clip_frac": float(np.mean(np.abs(ratios - 1.0) > clip_eps)),
        "entropy": entropy,
        "objective": objective,
    }
    return -(objective + entropy_coef * entropy), grads, stats


def value_loss_and_grad(value: MLP, pooled: np.ndarray, returns: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """Half mean squared error of V(s) against the GAE returns."""
    if pooled.shape[0] == 0:
        return 0.0, [np.zeros_like(p) for p in value.parameters()]
    out, activations = value.forward(pooled)
    error = out[:, 0] - returns
    grads = value.backward(activations, (error / error.size)[:, None])
    return float(0.5 * np.mean(error**2)), grads


def _all_finite(grads: List[np.ndarray]) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads)


def ppo_update(
    params: PolicyParams, trajectories: Sequence[Trajectory], cfg: PPOConfig
) -> Tuple[PolicyParams, Dict[str, float]]:
    """Run ``epochs_per_update`` epochs of minibatch PPO on the collected slots.

    A minibatch holds ``max(1, minibatch_size // vm_count)`` slots. Returns
    updated copies of the parameters and mean diagnostics over all steps.

    Raises:
        IncompleteTrajectory: if no trajectory is given or one is unfinished
        NonFiniteGradient: on the first non-finite gradient or parameter
    """
    if not trajectories:
        raise IncompleteTrajectory("ppo_update needs at least one trajectory")
    for traj in trajectories:
        if traj.advantages is None:
            compute_advantages(traj, cfg)
    batch = Batch.from_trajectories(trajectories)

    updated = params.copy()
    vm_count = max((f.shape[0] for f in batch.features), default=0)
    slots_per_batch = max(1, cfg.minibatch_size // max(1, vm_count))
    rng = make_rng(cfg.seed, params.iteration, 1)

    totals = {"ratio": 0.0, "clip_frac": 0.0, "entropy": 0.0, "objective": 0.0, "value_loss": 0.0}
    step = 0
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(len(batch))
        for start in range(0, len(order), slots_per_batch):
            minibatch = batch.subset(order[start : start + slots_per_batch])

            _, policy_grads, stats = policy_loss_and_grad(
                updated.policy, minibatch, cfg.clip_eps, cfg.entropy_coef
            )
            if not _all_finite(policy_grads):
                raise NonFiniteGradient(step, "policy")
            policy_grads, _ = clip_by_global_norm(policy_grads, cfg.max_grad_norm)
            updated.policy_opt.apply(updated.policy.parameters(), policy_grads)

            value_loss, value_grads = value_loss_and_grad(updated.value, minibatch.pooled, minibatch.returns)
            if not _all_finite(value_grads):
                raise NonFiniteGradient(step, "value")
            value_grads, _ = clip_by_global_norm(value_grads, cfg.max_grad_norm)
            updated.value_opt.apply(updated.value.parameters(), value_grads)

            if not updated.is_finite():
                raise NonFiniteGradient(step, "parameters")
            for key in ("ratio", "clip_frac", "entropy", "objective"):
                totals[key] += stats[key]
            totals["value_loss"] += value_loss
            step += 1

    updated.iteration += 1
    diagnostics = {key: value / max(step, 1) for key, value in totals.items()}
    diagnostics["steps"] = float(step)
    return updated, diagnostics


def rollout_episode(
    params: PolicyParams, request: RequestSet, config: SimulationConfig, seed: int, episode: int = 0
) -> Trajectory:
    """Play one full episode with sampled actions and PABFD placement.

    Rewards are left empty; see :func:`assign_rewards`.
    """
    state = new_state(request, config.cluster)
    traj = Trajectory()
    while not state.is_terminal:
        features = encode_state(state, config.detection)
        pooled = pool_features(features)
        actions, log_prob = select_action(
            params, features, mode="sample", seed=make_rng(seed, params.iteration, episode, state.slot)
        )
        status_quo = account_slot(state, state.slot).ec_total
        state, accounting = advance_slot(state, mask_to_migration(state, actions), pabfd_place)

        traj.features.append(features)
        traj.pooled.append(pooled)
        traj.actions.append(actions)
        traj.log_probs.append(log_prob)
        traj.values.append(params.state_value(pooled))
        traj.status_quo_ec.append(status_quo)
        traj.realized_ec.append(accounting.ec_total)
        traj.accounting.append(accounting)
    traj.terminal = True
    return traj


def _collect(
    params: PolicyParams, request: RequestSet, config: SimulationConfig
) -> List[Trajectory]:
    cfg = config.ppo
    episodes = range(cfg.rollout_episodes)
    if cfg.parallel and config.threads > 1 and cfg.rollout_episodes > 1:
        with ThreadPoolExecutor(max_workers=min(config.threads, cfg.rollout_episodes)) as pool:
            return list(pool.map(lambda e: rollout_episode(params, request, config, cfg.seed, e), episodes))
    return [rollout_episode(params, request, config, cfg.seed, e) for e in episodes]


def train(
    request: RequestSet,
    config: SimulationConfig,
    params: Optional[PolicyParams] = None,
    on_iteration: Optional[Callable[[Dict[str, float]], None]] = None,
) -> Tuple[PolicyParams, List[Dict[str, float]]]:
    """Train for ``config.ppo.iterations`` iterations, continuing from ``params`` if given.

    Returns:
        (final parameters, one learning-curve record per iteration)
    """
    cfg = config.ppo
    params = params or PolicyParams.init(cfg)
    scale = cfg.reward_scale or params.reward_scale
    host_count = None
    curve: List[Dict[str, float]] = []

    for _ in range(cfg.iterations):
        iteration = params.iteration
        trajectories = _collect(params, request, config)
        if scale is None:
            slot_ec = [ec for traj in trajectories for ec in traj.status_quo_ec]
            scale = float(np.mean(slot_ec)) if slot_ec and np.mean(slot_ec) > 0 else 1.0
            logger.info(f"reward scale set to {scale:.1f} (mean per-slot EC of the first rollout)")
        params.reward_scale = scale
        for traj in trajectories:
            compute_advantages(assign_rewards(traj, scale), cfg)

        if host_count is None:
            first = trajectories[0].accounting
            host_count = len(first[0].chi) if first else 0
        episodes = [summarize(traj.accounting, request, host_count) for traj in trajectories]
        params, diagnostics = ppo_update(params, trajectories, cfg)

        record = {
            "iteration": iteration,
            "mean_ec": float(np.mean([m.total_ec for m in episodes])),
            "mean_slav": float(np.mean([m.slav for m in episodes])),
            "mean_migrations": float(np.mean([m.migrations for m in episodes])),
            "clip_frac": diagnostics["clip_frac"],
            "entropy": diagnostics["entropy"],
            "mean_selected": float(np.mean([traj.selected_per_slot for traj in trajectories])),
        }
        curve.append(record)
        logger.info(
            f"iteration {iteration}: mean EC {record['mean_ec']:.1f}, "
            f"SLAV {record['mean_slav']:.3g}, migrations {record['mean_migrations']:.1f}"
        )
        if on_iteration is not None:
            on_iteration(record)
    return params, curve
