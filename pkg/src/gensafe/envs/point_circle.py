import numpy as np

from gensafe.envs.base import PointMassEnv, PointState, register_env


@register_env("point-circle")
class PointCircleEnv(PointMassEnv):
    """Run along a target circle while keeping |x| inside a boundary.

    Reward is the counter-clockwise tangential speed, damped by the distance
    to the target circle. Cost is 1 whenever the next x coordinate lies
    beyond the boundary.

    Observation: position (2), velocity (2), distance to the right and left
    boundary (2).
    """

    def __init__(self, horizon: int = 400, circle_radius: float = 1.0, boundary: float = 0.7,
                 start_extent: float = 0.1, **kwargs):
        self.circle_radius = circle_radius
        self.boundary = boundary
        self.start_extent = start_extent
        super().__init__(horizon=horizon, **kwargs)

    @property
    def n_s(self) -> int:
        return 6

    def _initial_state(self) -> PointState:
        position = self.np_random.uniform(-self.start_extent, self.start_extent, size=2)
        return PointState(position, np.zeros(2))

    def observe(self, state: PointState) -> np.ndarray:
        x = state.position[0]
        return np.concatenate([state.position, state.velocity, [self.boundary - x, self.boundary + x]])

    def reward(self, state: PointState, next_state: PointState) -> float:
        x, y = next_state.position
        vx, vy = next_state.velocity
        radius = float(np.hypot(x, y))
        if radius == 0.0:
            return 0.0
        tangential = (-vx * y + vy * x) / radius
        return float(tangential / (1.0 + abs(radius - self.circle_radius)))

    def cost(self, state: PointState, next_state: PointState) -> float:
        return float(abs(next_state.position[0]) > self.boundary)
