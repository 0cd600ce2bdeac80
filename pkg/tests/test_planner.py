import numpy as np
import pytest

from gensafe.abstraction import RomdpModel
from gensafe.errors import NonConvergenceError
from gensafe.planner import averaged_backup, policy_averaged, value_iteration


def linear_solution(model):
    transition, cost = policy_averaged(model)
    return np.linalg.solve(np.eye(model.k_s) - model.discount * transition, cost)


class TestValueIteration:

    def test_zero_cost(self):
        """Test that a cost-free ROMDP has zero values."""
        states = [0, 1, 2, 1]
        model = RomdpModel.from_reduced(states, [0, 1, 0, 0], [1, 2, 0, 0], [0.0] * 4, states, [0, 1, 0, 0],
                                        k_s=3, n_actions=2, delta=0.0, discount=0.95)
        result = value_iteration(model)
        np.testing.assert_array_equal(result.values, np.zeros(3))
        assert result.iterations_run == 1

    def test_self_loop(self):
        """Test V = c / (1 - gamma) for a single absorbing state."""
        model = RomdpModel.from_reduced([0, 0], [0, 0], [0, 0], [0.4, 0.4], [0], [0], k_s=1, n_actions=1,
                                        delta=1.0, discount=0.9)
        result = value_iteration(model, tolerance=1e-10)
        assert result[0] == pytest.approx(4.0, rel=1e-8)

    def test_example_matches_linear_solve(self, example_model):
        """Test the worked example against (I - gamma M)^-1 b."""
        result = value_iteration(example_model, tolerance=1e-10)
        np.testing.assert_allclose(result.values, linear_solution(example_model), rtol=1e-6)

    def test_random_models_match_linear_solve(self, rng, random_model):
        """Test random ROMDPs against the linear solve."""
        for _ in range(5):
            model = random_model(rng, k_s=int(rng.integers(2, 10)), discount=float(rng.uniform(0.5, 0.95)))
            result = value_iteration(model, tolerance=1e-10)
            np.testing.assert_allclose(result.values, linear_solution(model), rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("discount", [0.9, 0.99])
    def test_hundred_random_models_within_stopping_bound(self, rng, random_model, discount):
        """Test 100 random ROMDPs per discount: the error stays within gamma * tolerance / (1 - gamma)."""
        tolerance = 1e-8
        bound = discount * tolerance / (1.0 - discount) + 1e-10
        for _ in range(100):
            model = random_model(rng, k_s=int(rng.integers(2, 21)), discount=discount)
            result = value_iteration(model, tolerance=tolerance, max_iters=100_000)
            assert result.final_delta < tolerance
            assert np.max(np.abs(result.values - linear_solution(model))) <= bound

    def test_fixed_point_residual(self, rng, random_model):
        """Test that the converged values are a fixed point of the averaged backup."""
        model = random_model(rng)
        tolerance = 1e-6
        values = value_iteration(model, tolerance=tolerance).values
        residual = np.max(np.abs(averaged_backup(model, values) - values))
        assert residual <= tolerance

    def test_values_are_non_negative(self, rng, random_model):
        """Test that non-negative costs give non-negative values."""
        values = value_iteration(random_model(rng)).values
        assert np.all(values >= 0)

    def test_monotone_in_cost(self, example_model):
        """Test that raising a cost never lowers any value."""
        before = value_iteration(example_model, tolerance=1e-10).values
        example_model.reduced_cost[1, 0] += 0.5
        after = value_iteration(example_model, tolerance=1e-10).values
        assert np.all(after >= before - 1e-9)
        assert after[1] > before[1]

    def test_non_convergence(self, example_model):
        """Test that hitting the sweep limit raises with the last values attached."""
        with pytest.raises(NonConvergenceError) as error:
            value_iteration(example_model, tolerance=1e-12, max_iters=3)
        assert error.value.values.shape == (3,)
        assert error.value.delta > 1e-12

    def test_discount_must_be_below_one(self, example_model):
        """Test that an undiscounted ROMDP is rejected."""
        example_model.discount = 1.0
        with pytest.raises(ValueError, match="discount below 1"):
            value_iteration(example_model)

    def test_rows_must_be_stochastic(self, example_model):
        """Test that a corrupted transition row is rejected."""
        example_model.transition[2, 0] = 0.0
        with pytest.raises(ValueError, match="sum to 1"):
            value_iteration(example_model)


class TestAveragedBackup:

    def test_contraction(self, rng, random_model):
        """Test ||B u - B v|| <= gamma ||u - v|| in the max norm."""
        model = random_model(rng, discount=0.8)
        for _ in range(10):
            u = rng.normal(size=model.k_s) * 10
            v = rng.normal(size=model.k_s) * 10
            lhs = np.max(np.abs(averaged_backup(model, u) - averaged_backup(model, v)))
            assert lhs <= 0.8 * np.max(np.abs(u - v)) + 1e-12

    def test_policy_averaged_example(self, example_model):
        """Test M and b of the worked example."""
        transition, cost = policy_averaged(example_model)
        np.testing.assert_allclose(cost, [0.3, 0.6, 0.1])
        np.testing.assert_allclose(transition[1], [0.0, 0.5, 0.5])
        np.testing.assert_allclose(transition.sum(axis=1), 1.0)
