"""PPO and PPO-Lagrangian learners.

The Lagrangian variant maximizes J_R - lambda * J_C with clipped surrogate
objectives for both streams and updates the multiplier from the mean
episode cost of the epoch:

    lambda <- max(0, lambda + lr_lambda * (mean episode cost - d))
"""
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from gensafe.config import SrlSection
from gensafe.errors import ShapeMismatchError
from gensafe.tinynet import Adam, GaussianPolicy, Mlp, RngLike, as_rng

logger = logging.getLogger(__name__)


def compute_gae(rewards, values, next_values, ends, gamma: float, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over a flat sequence of steps.

    Args:
        rewards: Per-step rewards (or costs)
        values: V(s_t)
        next_values: V(s_{t+1}), already zeroed where s_{t+1} is terminal
        ends: True where an episode ends at step t (terminal or truncated)
        gamma: Discount
        lam: GAE smoothing parameter

    Returns:
        (advantages, value targets = advantages + values)
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    ends = np.asarray(ends, dtype=bool)
    if not len(rewards) == len(values) == len(next_values) == len(ends):
        raise ShapeMismatchError(f"GAE inputs differ in length: rewards {len(rewards)}, values {len(values)}, "
                                 f"next values {len(next_values)}, ends {len(ends)}")
    deltas = rewards + gamma * next_values - values
    advantages = np.zeros_like(deltas)
    running = 0.0
    for t in reversed(range(len(deltas))):
        running = deltas[t] + (0.0 if ends[t] else gamma * lam * running)
        advantages[t] = running
    return advantages, advantages + values


class RolloutBuffer:
    """Steps collected during one epoch, plus the advantages computed from them."""

    def __init__(self):
        self.states: List[np.ndarray] = []
        self.actions: List[np.ndarray] = []
        self.log_probs: List[float] = []
        self.rewards: List[float] = []
        self.costs: List[float] = []
        self.next_states: List[np.ndarray] = []
        self.terminals: List[bool] = []
        self.ends: List[bool] = []
        self.reward_advantages: Optional[np.ndarray] = None
        self.cost_advantages: Optional[np.ndarray] = None
        self.reward_targets: Optional[np.ndarray] = None
        self.cost_targets: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.states)

    def add(self, state, action, log_prob: float, reward: float, cost: float, next_state,
            terminal: bool, end: bool) -> None:
        """Store one step. `action` is the action the policy sampled, before any correction."""
        self.states.append(np.asarray(state, dtype=float))
        self.actions.append(np.asarray(action, dtype=float))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.costs.append(float(cost))
        self.next_states.append(np.asarray(next_state, dtype=float))
        self.terminals.append(bool(terminal))
        self.ends.append(bool(end or terminal))

    def mark_end(self) -> None:
        """Truncate the trailing partial episode."""
        if self.ends:
            self.ends[-1] = True

    def _bootstrap(self, net: Mlp) -> Tuple[np.ndarray, np.ndarray]:
        values = net.predict(np.stack(self.states))[:, 0]
        next_values = net.predict(np.stack(self.next_states))[:, 0] * (1.0 - np.asarray(self.terminals, dtype=float))
        return values, next_values

    def compute_advantages(self, value_r: Mlp, value_c: Optional[Mlp], gamma: float, lam: float) -> None:
        """Fill advantages and value targets; reward advantages are normalized, cost advantages are not."""
        if not self.states:
            raise ValueError("Cannot compute advantages of an empty buffer")
        values, next_values = self._bootstrap(value_r)
        advantages, self.reward_targets = compute_gae(self.rewards, values, next_values, self.ends, gamma, lam)
        std = advantages.std()
        self.reward_advantages = (advantages - advantages.mean()) / (std if std > 0 else 1.0)
        if value_c is not None:
            values, next_values = self._bootstrap(value_c)
            self.cost_advantages, self.cost_targets = compute_gae(self.costs, values, next_values, self.ends,
                                                                  gamma, lam)
        else:
            self.cost_advantages = np.zeros(len(self))
            self.cost_targets = None


@dataclass
class LagrangeState:
    multiplier: float = 0.0
    lr: float = 0.05
    cost_limit: float = 25.0

    def __post_init__(self):
        if self.multiplier < 0:
            raise ValueError(f"Lagrange multiplier must be non-negative, got {self.multiplier}")

    def update(self, mean_episode_cost: float) -> float:
        """Projected gradient step on the multiplier."""
        self.multiplier = max(0.0, self.multiplier + self.lr * (mean_episode_cost - self.cost_limit))
        return self.multiplier


class Surrogate(NamedTuple):
    objective: float
    grad_log_prob: np.ndarray
    skipped: int


def clipped_surrogate(log_probs, old_log_probs, advantages, clip: float) -> Surrogate:
    """mean_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t) and its gradient w.r.t. the new log-densities.

    Samples with a non-finite ratio are excluded from the mean and counted.
    """
    ratio = np.exp(np.asarray(log_probs, dtype=float) - np.asarray(old_log_probs, dtype=float))
    advantages = np.asarray(advantages, dtype=float)
    valid = np.isfinite(ratio)
    skipped = int(np.count_nonzero(~valid))
    if skipped:
        logger.debug(f"Skipping {skipped} sample(s) with a non-finite probability ratio")
    count = int(np.count_nonzero(valid))
    grad = np.zeros_like(advantages)
    if count == 0:
        return Surrogate(0.0, grad, skipped)
    ratio_v, adv_v = ratio[valid], advantages[valid]
    unclipped = ratio_v * adv_v
    clipped = np.clip(ratio_v, 1.0 - clip, 1.0 + clip) * adv_v
    objective = float(np.mean(np.minimum(unclipped, clipped)))
    grad[valid] = np.where(unclipped <= clipped, unclipped, 0.0) / count
    return Surrogate(objective, grad, skipped)


class PpoObjectives(NamedTuple):
    reward_objective: float
    cost_objective: float
    reward_grads: List[np.ndarray]
    cost_grads: List[np.ndarray]
    skipped: int


def ppo_objectives(policy: GaussianPolicy, states, actions, old_log_probs, reward_advantages,
                   cost_advantages, clip: float) -> PpoObjectives:
    """Clipped estimates of J_R and J_C and their policy gradients."""
    reward = clipped_surrogate(policy.log_prob(states, actions), old_log_probs, reward_advantages, clip)
    reward_grads = policy.log_prob_backward(reward.grad_log_prob)
    cost = clipped_surrogate(policy.log_prob(states, actions), old_log_probs, cost_advantages, clip)
    cost_grads = policy.log_prob_backward(cost.grad_log_prob)
    return PpoObjectives(reward.objective, cost.objective, reward_grads, cost_grads, reward.skipped)


def value_loss(net: Mlp, states: np.ndarray, targets: np.ndarray, scale: float = 1.0) -> Tuple[float, List[np.ndarray]]:
    """Mean squared error of scale * V(s) against scale * target, with parameter gradients."""
    prediction = net.forward(states)[:, 0]
    error = scale * (prediction - targets)
    grad = (2.0 * scale * error / len(error))[:, None]
    return float(np.mean(error ** 2)), net.backward(grad)


def normalized_cost_loss(scaled_loss: float, targets: np.ndarray, scale: float) -> float:
    """Turn a scale-weighted MSE into the MSE relative to the spread of the targets.

    Constant targets have no spread; the plain MSE is returned for them.
    """
    mse = scaled_loss / scale ** 2
    spread = float(np.var(targets))
    return mse / spread if spread > 1e-12 else mse


class ActorCritic:
    """Gaussian policy with reward and (optionally) cost value heads and their optimizers."""

    def __init__(self, n_s: int, n_a: int, config: Optional[SrlSection] = None, rng: RngLike = None,
                 cost_head: bool = True):
        self.config = config or SrlSection()
        generator = as_rng(rng)
        self.policy = GaussianPolicy(n_s, n_a, self.config.hidden, rng=generator,
                                     init_log_std=self.config.init_log_std)
        self.value_r = Mlp([n_s, *self.config.hidden, 1], rng=generator)
        self.value_c = Mlp([n_s, *self.config.hidden, 1], rng=generator) if cost_head else None
        self.policy_optimizer = Adam(self.policy.params, lr=self.config.policy_lr)
        self.value_r_optimizer = Adam(self.value_r.params, lr=self.config.value_lr)
        self.value_c_optimizer = Adam(self.value_c.params, lr=self.config.value_lr) if cost_head else None

    def networks(self) -> dict:
        nets = {"policy": self.policy, "value_r": self.value_r}
        if self.value_c is not None:
            nets["value_c"] = self.value_c
        return nets


@dataclass
class LossReport:
    """Losses of one update.

    `value_c_loss` is the cost head's mean squared error over the final pass
    divided by the variance of the cost targets, so 0 is a perfect fit and 1
    is no better than predicting their mean. `minibatch_losses` keeps the raw
    (1 - gamma)-scaled training losses of that pass.
    """
    policy_objective: float = 0.0
    value_r_loss: float = 0.0
    value_c_loss: float = float("nan")
    multiplier: float = 0.0
    skipped: int = 0
    approx_kl: float = 0.0
    minibatch_losses: List[float] = field(default_factory=list, repr=False)


def _update(buffer: RolloutBuffer, agent: ActorCritic, multiplier: float, config: SrlSection,
            rng: RngLike) -> LossReport:
    if buffer.reward_advantages is None:
        buffer.compute_advantages(agent.value_r, agent.value_c, config.gamma, config.gae_lambda)
    generator = as_rng(rng)
    states = np.stack(buffer.states)
    actions = np.stack(buffer.actions)
    old_log_probs = np.asarray(buffer.log_probs)
    n = len(buffer)
    cost_scale = 1.0 - config.gamma if config.gamma < 1.0 else 1.0
    report = LossReport(multiplier=multiplier)

    for update_epoch in range(config.update_epochs):
        final_pass = update_epoch == config.update_epochs - 1
        order = generator.permutation(n)
        for start in range(0, n, config.minibatch_size):
            batch = order[start:start + config.minibatch_size]
            log_probs = agent.policy.log_prob(states[batch], actions[batch])
            reward = clipped_surrogate(log_probs, old_log_probs[batch], buffer.reward_advantages[batch], config.clip)
            grad_log_prob = reward.grad_log_prob
            objective = reward.objective
            skipped = reward.skipped
            if multiplier > 0:
                cost = clipped_surrogate(log_probs, old_log_probs[batch], buffer.cost_advantages[batch], config.clip)
                grad_log_prob = grad_log_prob - multiplier * cost.grad_log_prob
                objective -= multiplier * cost.objective
            grads = agent.policy.log_prob_backward(grad_log_prob)
            agent.policy_optimizer.step([-g for g in grads])
            agent.policy.clamp_log_std()

            loss_r, grads_r = value_loss(agent.value_r, states[batch], buffer.reward_targets[batch])
            agent.value_r_optimizer.step(grads_r)
            if agent.value_c is not None and buffer.cost_targets is not None:
                loss_c, grads_c = value_loss(agent.value_c, states[batch], buffer.cost_targets[batch], cost_scale)
                agent.value_c_optimizer.step(grads_c)
                if final_pass:
                    report.minibatch_losses.append(loss_c)

            if final_pass:
                report.policy_objective = objective
                report.value_r_loss = loss_r
            report.skipped += skipped

    if report.minibatch_losses:
        report.value_c_loss = normalized_cost_loss(float(np.mean(report.minibatch_losses)),
                                                   buffer.cost_targets, cost_scale)
    new_log_probs = agent.policy.log_density(actions, agent.policy.mean(states))
    report.approx_kl = float(np.mean(old_log_probs - new_log_probs))
    return report


def update_policy_ppo(buffer: RolloutBuffer, agent: ActorCritic, config: Optional[SrlSection] = None,
                      rng: RngLike = None) -> LossReport:
    """Plain PPO: maximize the clipped reward objective.

    A cost head, if present, is still fitted so its loss can drive activation.
    """
    return _update(buffer, agent, 0.0, config or agent.config, rng)


def update_policy_lagrangian(buffer: RolloutBuffer, agent: ActorCritic, lagrange: LagrangeState,
                             mean_episode_cost: float, config: Optional[SrlSection] = None,
                             rng: RngLike = None) -> LossReport:
    """PPO-Lagrangian: maximize J_R - lambda * J_C, then take a projected step on lambda."""
    if agent.value_c is None:
        raise ValueError("The Lagrangian update needs a cost value head")
    report = _update(buffer, agent, lagrange.multiplier, config or agent.config, rng)
    report.multiplier = lagrange.update(mean_episode_cost)
    logger.debug(f"Lagrange multiplier updated to {report.multiplier:.4g} (episode cost {mean_episode_cost:.3g})")
    return report
