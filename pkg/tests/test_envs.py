import numpy as np
import pytest

from gensafe.envs import HazardGoalEnv, PointCircleEnv, available_envs, make_env, register_env
from gensafe.errors import NumericDomainError


class TestRegistry:

    def test_known_environments(self):
        """Test that both desk-scale tasks are registered."""
        assert {"hazard-goal", "point-circle"} <= set(available_envs())
        assert isinstance(make_env("point-circle"), PointCircleEnv)
        assert isinstance(make_env("hazard-goal", hazard_count=2), HazardGoalEnv)

    def test_unknown_environment(self):
        """Test that an unknown name is rejected."""
        with pytest.raises(ValueError, match="Unknown environment 'nope'"):
            make_env("nope")

    def test_duplicate_registration(self):
        """Test that registering a name twice raises error."""
        with pytest.raises(ValueError, match="Environment 'point-circle' already registered"):
            register_env("point-circle")(PointCircleEnv)


class TestPointMassDynamics:

    def test_reset_is_deterministic(self):
        """Test that the same seed gives the same trajectory."""
        observations = []
        for _ in range(2):
            env = make_env("hazard-goal")
            obs, _ = env.reset(seed=7)
            trace = [obs]
            for step in range(5):
                trace.append(env.step(np.array([0.3, -0.2 * step]))[0])
            observations.append(np.stack(trace))
        np.testing.assert_array_equal(observations[0], observations[1])

    def test_reset_has_zero_velocity(self):
        """Test that episodes start at rest."""
        env = make_env("point-circle")
        obs, info = env.reset(seed=3)
        np.testing.assert_array_equal(obs[2:4], [0.0, 0.0])
        assert info == {}

    def test_semi_implicit_euler(self):
        """Test that the position is advanced with the updated velocity."""
        env = PointCircleEnv()
        env.set_state([0.0, 0.0])
        obs, _, _, _, _, info = env.step(np.array([1.0, 0.0]))
        np.testing.assert_allclose(obs[2:4], [0.2, 0.0])
        np.testing.assert_allclose(obs[0:2], [0.02, 0.0])
        assert info == {"clamped": False}

    def test_action_is_clamped(self):
        """Test that out-of-bounds actions are clamped and flagged."""
        env = PointCircleEnv()
        env.set_state([0.0, 0.0])
        obs, _, _, _, _, info = env.step(np.array([3.0, -5.0]))
        assert info["clamped"] is True
        np.testing.assert_allclose(obs[2:4], [0.2, -0.2])

    def test_speed_is_limited(self):
        """Test that the velocity saturates at the maximum speed."""
        env = PointCircleEnv()
        env.set_state([0.0, 0.0], [0.95, 0.0])
        obs, *_ = env.step(np.array([1.0, 0.0]))
        assert obs[2] == pytest.approx(1.0)

    def test_non_finite_action(self):
        """Test that NaN actions are rejected."""
        env = PointCircleEnv()
        env.reset(seed=0)
        with pytest.raises(NumericDomainError):
            env.step(np.array([np.nan, 0.0]))

    def test_step_before_reset(self):
        """Test that stepping an unreset environment raises error."""
        with pytest.raises(RuntimeError, match="reset"):
            PointCircleEnv().step(np.zeros(2))

    def test_truncation_at_horizon(self):
        """Test that the episode is truncated after `horizon` steps."""
        env = PointCircleEnv(horizon=3)
        env.reset(seed=0)
        flags = [env.step(np.zeros(2))[4] for _ in range(3)]
        assert flags == [False, False, True]

    def test_invalid_parameters(self):
        """Test that a non-positive horizon or a bad discount is rejected."""
        with pytest.raises(ValueError, match="Horizon"):
            PointCircleEnv(horizon=0)
        with pytest.raises(ValueError, match="Discount"):
            PointCircleEnv(discount=1.0)


class TestHazardGoal:

    def test_cost_inside_hazard(self):
        """Test that the cost is 1 exactly when the next position lies in a hazard disk."""
        env = HazardGoalEnv(hazards=[[0.0, 0.0]], hazard_radius=0.3)
        for position, expected in (([0.25, 0.0], 1.0), ([0.0, -0.29], 1.0), ([0.5, 0.0], 0.0), ([0.3, 0.3], 0.0)):
            env.set_state(position)
            _, _, cost, *_ = env.step(np.zeros(2))
            assert cost == expected, position

    def test_lidar_east_beam(self):
        """Test the range reading of a beam pointing at a hazard."""
        env = HazardGoalEnv(hazards=[[1.0, 0.0]], hazard_radius=0.3, lidar_beams=4, lidar_range=3.0)
        readings = env.lidar(np.array([0.0, 0.0]))
        assert readings[0] == pytest.approx(0.7)
        np.testing.assert_allclose(readings[1:], [3.0, 3.0, 3.0])

    def test_lidar_inside_hazard(self):
        """Test that every beam reads zero inside a hazard."""
        env = HazardGoalEnv(hazards=[[0.0, 0.0]], lidar_beams=8)
        np.testing.assert_array_equal(env.lidar(np.array([0.1, 0.0])), np.zeros(8))

    def test_observation_layout(self):
        """Test the observation width and the goal direction."""
        env = HazardGoalEnv(hazards=[], goal=(1.0, 0.0), lidar_beams=16)
        obs = env.set_state([0.0, 0.0])
        assert obs.shape == (env.n_s,) == (22,)
        np.testing.assert_allclose(obs[4:6], [1.0, 0.0])

    def test_goal_terminates_with_bonus(self):
        """Test that reaching the goal ends the episode and pays the bonus."""
        env = HazardGoalEnv(hazards=[], goal=(0.0, 0.0), goal_radius=0.3, goal_bonus=1.0)
        env.set_state([0.35, 0.0], [-1.0, 0.0])
        _, reward, cost, terminated, truncated, _ = env.step(np.zeros(2))
        assert terminated and not truncated
        assert cost == 0.0
        assert reward == pytest.approx(0.1 + 1.0)

    def test_layout_keeps_start_and_goal_clear(self):
        """Test that generated hazards avoid the start area and the goal."""
        env = HazardGoalEnv(hazard_count=8, layout_seed=3)
        assert env.hazards.shape == (8, 2)
        assert np.all(np.linalg.norm(env.hazards - env.goal, axis=1) > env.goal_radius + env.hazard_radius)
        assert not env.in_hazard(env.start_center)


class TestPointCircle:

    def test_boundary_cost_is_symmetric(self):
        """Test that the boundary cost mirrors around x = 0."""
        env = PointCircleEnv(boundary=0.7)
        costs = []
        for x in (0.8, -0.8, 0.5, -0.5):
            env.set_state([x, 0.0])
            costs.append(env.step(np.zeros(2))[2])
        assert costs == [1.0, 1.0, 0.0, 0.0]

    def test_counter_clockwise_motion_is_rewarded(self):
        """Test that running counter-clockwise on the circle earns positive reward."""
        env = PointCircleEnv(circle_radius=1.0)
        env.set_state([1.0, 0.0], [0.0, 1.0])
        forward = env.step(np.zeros(2))[1]
        env.set_state([1.0, 0.0], [0.0, -1.0])
        backward = env.step(np.zeros(2))[1]
        assert forward > 0
        assert backward == pytest.approx(-forward)

    def test_boundary_distances_in_observation(self):
        """Test the distances to both boundaries."""
        env = PointCircleEnv(boundary=0.7)
        obs = env.set_state([0.2, 0.4])
        np.testing.assert_allclose(obs[4:6], [0.5, 0.9])
