import numpy as np
import pytest

from gensafe.config import SrlSection
from gensafe.errors import ShapeMismatchError
from gensafe.srl import (ActorCritic, LagrangeState, RolloutBuffer, clipped_surrogate, compute_gae,
                         normalized_cost_loss, update_policy_lagrangian, update_policy_ppo)


def reference_gae(rewards, values, next_values, ends, gamma, lam):
    """Advantages as explicit discounted sums of TD errors up to the episode end."""
    deltas = rewards + gamma * next_values - values
    advantages = np.zeros(len(deltas))
    for t in range(len(deltas)):
        weight = 1.0
        for k in range(t, len(deltas)):
            advantages[t] += weight * deltas[k]
            if ends[k]:
                break
            weight *= gamma * lam
    return advantages


def bandit_buffer(agent, rng, target, count=200):
    """One-step episodes in a single state with reward -||a - target||^2."""
    buffer = RolloutBuffer()
    state = np.ones(1)
    for _ in range(count):
        action, log_prob = agent.policy.sample(state, rng)
        reward = -float(np.sum((action - target) ** 2))
        buffer.add(state, action, log_prob, reward, 0.0, state, terminal=True, end=True)
    return buffer


BANDIT_CONFIG = SrlSection(update_epochs=10, minibatch_size=200, hidden=(8,), policy_lr=1e-2, value_lr=1e-2)


class TestComputeGae:

    def test_zero_lambda_gives_td_errors(self, rng):
        """Test that lambda = 0 reduces the advantages to one-step TD errors."""
        rewards, values, next_values = rng.normal(size=(3, 10))
        advantages, _ = compute_gae(rewards, values, next_values, np.zeros(10, dtype=bool), 0.9, 0.0)
        np.testing.assert_allclose(advantages, rewards + 0.9 * next_values - values)

    def test_three_step_oracle(self):
        """Test a hand-computed three-step episode."""
        advantages, targets = compute_gae([1.0, 2.0, 3.0], [0.5, 1.0, 1.5], [1.0, 1.5, 0.0],
                                          [False, False, True], gamma=0.9, lam=0.8)
        np.testing.assert_allclose(advantages, [3.8696, 3.43, 1.5])
        np.testing.assert_allclose(targets, [4.3696, 4.43, 3.0])

    def test_telescoping_with_unit_lambda(self, rng):
        """Test that lambda = 1 gives the discounted return minus the baseline."""
        rewards = rng.normal(size=6)
        values = rng.normal(size=6)
        next_values = np.append(values[1:], 0.0)
        ends = np.array([False] * 5 + [True])
        advantages, _ = compute_gae(rewards, values, next_values, ends, gamma=0.95, lam=1.0)
        returns = [sum(0.95 ** k * r for k, r in enumerate(rewards[t:])) for t in range(6)]
        np.testing.assert_allclose(advantages, np.array(returns) - values)

    def test_episode_ends_cut_the_recursion(self):
        """Test that advantages do not leak across episode boundaries."""
        advantages, _ = compute_gae([0.0, 1.0, 5.0], [0.0] * 3, [0.0] * 3, [False, True, True], 1.0, 1.0)
        np.testing.assert_allclose(advantages, [1.0, 1.0, 5.0])

    def test_matches_reference_on_random_data(self, rng):
        """Test random sequences with several episode ends against explicit sums."""
        for _ in range(5):
            n = int(rng.integers(5, 40))
            rewards, values, next_values = rng.normal(size=(3, n))
            ends = rng.random(n) < 0.2
            ends[-1] = True
            gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
            advantages, targets = compute_gae(rewards, values, next_values, ends, gamma, lam)
            np.testing.assert_allclose(advantages, reference_gae(rewards, values, next_values, ends, gamma, lam))
            np.testing.assert_allclose(targets, advantages + values)

    def test_length_mismatch(self):
        """Test that all inputs must have the same length."""
        with pytest.raises(ShapeMismatchError):
            compute_gae([1.0, 2.0], [0.0], [0.0, 0.0], [True, True], 0.9, 0.9)


class TestClippedSurrogate:

    RATIOS = np.array([0.5, 1.0, 1.3, 2.0])

    def test_positive_advantage(self):
        """Test that large ratios are clipped when the advantage is positive."""
        result = clipped_surrogate(np.log(self.RATIOS), np.zeros(4), np.ones(4), clip=0.2)
        assert result.objective == pytest.approx((0.5 + 1.0 + 1.2 + 1.2) / 4)
        np.testing.assert_allclose(result.grad_log_prob, [0.125, 0.25, 0.0, 0.0])
        assert result.skipped == 0

    def test_negative_advantage(self):
        """Test that small ratios are clipped when the advantage is negative."""
        result = clipped_surrogate(np.log(self.RATIOS), np.zeros(4), -np.ones(4), clip=0.2)
        assert result.objective == pytest.approx((-0.8 - 1.0 - 1.3 - 2.0) / 4)
        np.testing.assert_allclose(result.grad_log_prob, [0.0, -0.25, -0.325, -0.5])

    def test_gradient_matches_finite_differences(self, rng):
        """Test the gradient with respect to the new log-densities away from the clip kinks."""
        log_probs = rng.normal(scale=0.5, size=20)
        old = rng.normal(scale=0.5, size=20)
        ratios = np.exp(log_probs - old)
        keep = (np.abs(ratios - 0.8) > 1e-3) & (np.abs(ratios - 1.2) > 1e-3)
        log_probs, old = log_probs[keep], old[keep]
        advantages = rng.normal(size=len(log_probs))
        grad = clipped_surrogate(log_probs, old, advantages, 0.2).grad_log_prob
        eps = 1e-7
        for i in range(len(log_probs)):
            shifted = log_probs.copy()
            shifted[i] += eps
            upper = clipped_surrogate(shifted, old, advantages, 0.2).objective
            shifted[i] -= 2 * eps
            lower = clipped_surrogate(shifted, old, advantages, 0.2).objective
            assert grad[i] == pytest.approx((upper - lower) / (2 * eps), abs=1e-6)

    def test_non_finite_ratio_is_skipped(self):
        """Test that samples with an overflowing ratio are excluded and counted."""
        result = clipped_surrogate([np.inf, 0.0], [0.0, 0.0], [1.0, 2.0], clip=0.2)
        assert result.skipped == 1
        assert result.objective == pytest.approx(2.0)
        np.testing.assert_allclose(result.grad_log_prob, [0.0, 2.0])


class TestLagrangeState:

    def test_projected_at_zero(self):
        """Test that the multiplier never goes negative."""
        lagrange = LagrangeState(0.0, lr=0.1, cost_limit=25.0)
        assert lagrange.update(5.0) == 0.0

    def test_grows_with_violation(self):
        """Test the gradient step when the episode cost exceeds the limit."""
        lagrange = LagrangeState(0.5, lr=0.1, cost_limit=25.0)
        assert lagrange.update(35.0) == pytest.approx(1.5)

    def test_unchanged_at_the_limit(self):
        """Test that an episode cost equal to the limit leaves the multiplier alone."""
        lagrange = LagrangeState(0.7, lr=0.1, cost_limit=25.0)
        assert lagrange.update(25.0) == pytest.approx(0.7)

    def test_negative_initial_value(self):
        """Test that a negative multiplier is rejected."""
        with pytest.raises(ValueError, match="non-negative"):
            LagrangeState(-1.0)


class TestRolloutBuffer:

    def test_normalized_reward_advantages(self, rng):
        """Test that reward advantages are normalized and cost advantages are not."""
        agent = ActorCritic(2, 2, SrlSection(hidden=(4,)), rng=0)
        buffer = RolloutBuffer()
        for t in range(30):
            state = rng.normal(size=2)
            buffer.add(state, rng.normal(size=2), -1.0, rng.normal(), 3.0, rng.normal(size=2), False, t % 10 == 9)
        buffer.compute_advantages(agent.value_r, agent.value_c, 0.99, 0.95)
        assert buffer.reward_advantages.mean() == pytest.approx(0.0, abs=1e-9)
        assert buffer.reward_advantages.std() == pytest.approx(1.0)
        assert buffer.cost_advantages.mean() > 1.0

    def test_mark_end(self):
        """Test that the trailing partial episode is closed."""
        buffer = RolloutBuffer()
        buffer.add(np.zeros(2), np.zeros(2), 0.0, 0.0, 0.0, np.zeros(2), False, False)
        buffer.mark_end()
        assert buffer.ends == [True]

    def test_terminal_implies_end(self):
        """Test that a terminal step always ends the episode."""
        buffer = RolloutBuffer()
        buffer.add(np.zeros(2), np.zeros(2), 0.0, 0.0, 0.0, np.zeros(2), True, False)
        assert buffer.ends == [True]

    def test_empty_buffer(self):
        """Test that advantages of an empty buffer cannot be computed."""
        agent = ActorCritic(2, 2, rng=0)
        with pytest.raises(ValueError, match="empty buffer"):
            RolloutBuffer().compute_advantages(agent.value_r, agent.value_c, 0.99, 0.95)


class TestPolicyUpdates:

    def test_zero_advantages_leave_policy_unchanged(self, rng):
        """Test that an update with zero advantages does not move the policy."""
        agent = ActorCritic(1, 2, BANDIT_CONFIG, rng=0)
        buffer = bandit_buffer(agent, rng, np.zeros(2))
        buffer.compute_advantages(agent.value_r, agent.value_c, 0.99, 0.95)
        buffer.reward_advantages = np.zeros(len(buffer))
        buffer.cost_advantages = np.zeros(len(buffer))
        before = [p.copy() for p in agent.policy.params]
        update_policy_ppo(buffer, agent, rng=1)
        for old, new in zip(before, agent.policy.params):
            np.testing.assert_array_equal(old, new)

    def test_bandit_mean_moves_to_target(self):
        """Test that repeated PPO updates pull the policy mean towards the best action."""
        rng = np.random.default_rng(0)
        agent = ActorCritic(1, 2, BANDIT_CONFIG, rng=0, cost_head=False)
        target = np.array([0.5, -0.5])
        start = np.linalg.norm(agent.policy.mean(np.ones(1)) - target)
        for _ in range(30):
            report = update_policy_ppo(bandit_buffer(agent, rng, target), agent, rng=rng)
        assert np.linalg.norm(agent.policy.mean(np.ones(1)) - target) < 0.5 * start
        assert np.isnan(report.value_c_loss)

    def test_updates_are_deterministic(self):
        """Test that identical seeds give identical parameters."""
        params = []
        for _ in range(2):
            rng = np.random.default_rng(3)
            agent = ActorCritic(1, 2, BANDIT_CONFIG, rng=3)
            lagrange = LagrangeState(0.5, lr=0.1, cost_limit=1.0)
            update_policy_lagrangian(bandit_buffer(agent, rng, np.ones(2)), agent, lagrange, 2.0, rng=rng)
            params.append(np.concatenate([p.ravel() for p in agent.policy.params]))
        np.testing.assert_array_equal(params[0], params[1])

    def test_lagrangian_reports_updated_multiplier(self, rng):
        """Test that the Lagrangian update steps the multiplier after the policy update."""
        agent = ActorCritic(1, 2, BANDIT_CONFIG, rng=0)
        lagrange = LagrangeState(0.2, lr=0.1, cost_limit=1.0)
        report = update_policy_lagrangian(bandit_buffer(agent, rng, np.zeros(2)), agent, lagrange, 3.0, rng=1)
        assert report.multiplier == pytest.approx(0.4)
        assert lagrange.multiplier == pytest.approx(0.4)
        assert np.isfinite(report.value_c_loss)

    def test_lagrangian_needs_cost_head(self, rng):
        """Test that PPO-Lagrangian requires a cost value head."""
        agent = ActorCritic(1, 2, BANDIT_CONFIG, rng=0, cost_head=False)
        with pytest.raises(ValueError, match="cost value head"):
            update_policy_lagrangian(bandit_buffer(agent, rng, np.zeros(2)), agent, LagrangeState(), 0.0)


class TestCostLossSignal:

    def test_relative_to_target_spread(self):
        """Test that the scaled loss is converted back and divided by the target variance."""
        assert normalized_cost_loss(0.04, np.array([0.0, 2.0]), 0.1) == pytest.approx(4.0)

    def test_constant_targets_give_plain_error(self):
        """Test that targets without spread report the unscaled squared error."""
        assert normalized_cost_loss(0.0025, np.zeros(5), 0.01) == pytest.approx(25.0)

    def test_sparse_costs_do_not_look_fitted(self):
        """Test that a cost head that cannot tell states apart reports a loss of at least 1."""
        rng = np.random.default_rng(5)
        agent = ActorCritic(1, 2, BANDIT_CONFIG, rng=0)
        buffer = RolloutBuffer()
        state = np.ones(1)
        for step in range(200):
            action, log_prob = agent.policy.sample(state, rng)
            buffer.add(state, action, log_prob, 0.0, float(step % 10 == 0), state, terminal=True, end=True)
        report = update_policy_ppo(buffer, agent, rng=1)
        assert max(report.minibatch_losses) < 0.05
        assert report.value_c_loss >= 1.0 - 1e-9
