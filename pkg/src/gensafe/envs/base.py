import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from gensafe.errors import require_finite

logger = logging.getLogger(__name__)

_environments: Dict[str, Callable[..., 'PointMassEnv']] = {}


def register_env(name: str) -> Callable:
    """Decorator registering an environment class under a CLI/config name."""
    def decorator(cls):
        if name in _environments:
            raise ValueError(f"Environment '{name}' already registered")
        _environments[name] = cls
        cls.env_name = name
        return cls
    return decorator


def make_env(name: str, **params) -> 'PointMassEnv':
    """Instantiate a registered environment.

    Args:
        name: Registered environment name, e.g. "hazard-goal"
        **params: Keyword arguments forwarded to the environment constructor

    Raises:
        ValueError: If no environment is registered under that name
    """
    if name not in _environments:
        raise ValueError(f"Unknown environment '{name}'. Known: {', '.join(sorted(_environments))}")
    return _environments[name](**params)


def available_envs() -> list[str]:
    return sorted(_environments)


@dataclass
class PointState:
    """Internal state of the point mass."""
    position: np.ndarray
    velocity: np.ndarray

    def copy(self) -> 'PointState':
        return PointState(self.position.copy(), self.velocity.copy())


StepResult = Tuple[np.ndarray, float, float, bool, bool, Dict[str, Any]]


class PointMassEnv(gym.Env):
    """Planar double-integrator CMDP.

    Subclasses define the initial distribution, the observation and the
    reward/cost functions. `step` follows the Safety-Gymnasium convention and
    returns (obs, reward, cost, terminated, truncated, info).
    """
    env_name = "point-mass"
    metadata = {"render_modes": []}

    def __init__(self, horizon: int, dt: float = 0.1, max_accel: float = 2.0, max_speed: float = 1.0,
                 discount: float = 0.99):
        if horizon <= 0:
            raise ValueError(f"Horizon must be positive, got {horizon}")
        if not 0.0 < discount < 1.0:
            raise ValueError(f"Discount must lie in (0, 1), got {discount}")
        self.horizon = horizon
        self.dt = dt
        self.max_accel = max_accel
        self.max_speed = max_speed
        self.discount = discount
        self.action_space = spaces.Box(low=-1.0, high=1.0, shape=(2,), dtype=np.float64)
        self.observation_space = spaces.Box(low=-np.inf, high=np.inf, shape=(self.n_s,), dtype=np.float64)
        self.state: Optional[PointState] = None
        self.elapsed = 0

    @property
    def n_s(self) -> int:
        raise NotImplementedError

    @property
    def n_a(self) -> int:
        return 2

    @property
    def action_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.action_space.low.copy(), self.action_space.high.copy()

    def _initial_state(self) -> PointState:
        raise NotImplementedError

    def observe(self, state: PointState) -> np.ndarray:
        raise NotImplementedError

    def reward(self, state: PointState, next_state: PointState) -> float:
        raise NotImplementedError

    def cost(self, state: PointState, next_state: PointState) -> float:
        raise NotImplementedError

    def is_terminal(self, next_state: PointState) -> bool:
        return False

    def clamp_action(self, action) -> Tuple[np.ndarray, bool]:
        action = require_finite("Action", action).reshape(self.n_a)
        low, high = self.action_bounds
        clamped = np.clip(action, low, high)
        return clamped, bool(np.any(clamped != action))

    def dynamics(self, state: PointState, action: np.ndarray) -> PointState:
        """Semi-implicit Euler step of the double integrator."""
        velocity = np.clip(state.velocity + self.max_accel * action * self.dt, -self.max_speed, self.max_speed)
        position = state.position + velocity * self.dt
        return PointState(position, velocity)

    def transition(self, state: PointState, action) -> Tuple[PointState, float, float, bool, bool]:
        """Pure transition: returns (next state, reward, cost, terminated, clamped)."""
        require_finite("State position", state.position)
        require_finite("State velocity", state.velocity)
        action, clamped = self.clamp_action(action)
        next_state = self.dynamics(state, action)
        return (next_state, self.reward(state, next_state), self.cost(state, next_state),
                self.is_terminal(next_state), clamped)

    def set_state(self, position, velocity=None) -> np.ndarray:
        """Place the point mass at a given position/velocity and return the observation."""
        position = require_finite("Position", position).copy()
        velocity = np.zeros(2) if velocity is None else require_finite("Velocity", velocity).copy()
        self.state = PointState(position, velocity)
        self.elapsed = 0
        return self.observe(self.state)

    def reset(self, *, seed: Optional[int] = None, options: Optional[dict] = None):
        super().reset(seed=seed)
        self.state = self._initial_state()
        self.elapsed = 0
        return self.observe(self.state), {}

    def step(self, action) -> StepResult:
        if self.state is None:
            raise RuntimeError("Environment must be reset before stepping")
        next_state, reward, cost, terminated, clamped = self.transition(self.state, action)
        self.state = next_state
        self.elapsed += 1
        truncated = self.elapsed >= self.horizon and not terminated
        return self.observe(next_state), reward, cost, terminated, truncated, {"clamped": clamped}
