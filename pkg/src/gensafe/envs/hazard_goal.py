import logging
from typing import Optional, Sequence

import numpy as np

from gensafe.envs.base import PointMassEnv, PointState, register_env

logger = logging.getLogger(__name__)


@register_env("hazard-goal")
class HazardGoalEnv(PointMassEnv):
    """Reach a goal while avoiding circular hazards.

    Reward is the progress towards the goal plus a one-off bonus when the goal
    is reached (which terminates the episode). Cost is 1 whenever the next
    position lies inside any hazard disk.

    Observation: position (2), velocity (2), unit direction to the goal (2)
    and `lidar_beams` range readings to the nearest hazard boundary.
    """

    def __init__(self, horizon: int = 500, hazard_count: int = 8, hazard_radius: float = 0.3,
                 arena: float = 2.0, goal: Sequence[float] = (1.5, 1.5), goal_radius: float = 0.3,
                 goal_bonus: float = 1.0, start_center: Sequence[float] = (-1.5, -1.5),
                 start_extent: float = 0.3, lidar_beams: int = 16, lidar_range: float = 3.0,
                 layout_seed: int = 0, hazards: Optional[Sequence[Sequence[float]]] = None, **kwargs):
        self.hazard_radius = hazard_radius
        self.arena = arena
        self.goal = np.asarray(goal, dtype=float)
        self.goal_radius = goal_radius
        self.goal_bonus = goal_bonus
        self.start_center = np.asarray(start_center, dtype=float)
        self.start_extent = start_extent
        self.lidar_beams = lidar_beams
        self.lidar_range = lidar_range
        angles = 2.0 * np.pi * np.arange(lidar_beams) / lidar_beams
        self._beam_directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        if hazards is None:
            self.hazards = self._draw_layout(hazard_count, layout_seed)
        else:
            self.hazards = np.asarray(hazards, dtype=float).reshape(-1, 2)
        super().__init__(horizon=horizon, **kwargs)

    @property
    def n_s(self) -> int:
        return 6 + self.lidar_beams

    def _draw_layout(self, count: int, layout_seed: int) -> np.ndarray:
        rng = np.random.default_rng(layout_seed)
        start_clearance = self.start_extent * np.sqrt(2.0) + self.hazard_radius + 0.1
        goal_clearance = self.goal_radius + self.hazard_radius + 0.1
        hazards = []
        attempts = 0
        while len(hazards) < count:
            attempts += 1
            if attempts > 10000:
                raise ValueError(f"Could not place {count} hazards in an arena of size {self.arena}")
            candidate = rng.uniform(-self.arena, self.arena, size=2)
            if np.linalg.norm(candidate - self.start_center) < start_clearance:
                continue
            if np.linalg.norm(candidate - self.goal) < goal_clearance:
                continue
            hazards.append(candidate)
        logger.debug(f"Placed {count} hazards after {attempts} attempts")
        return np.array(hazards).reshape(-1, 2)

    def _initial_state(self) -> PointState:
        offset = self.np_random.uniform(-self.start_extent, self.start_extent, size=2)
        return PointState(self.start_center + offset, np.zeros(2))

    def in_hazard(self, position: np.ndarray) -> bool:
        if len(self.hazards) == 0:
            return False
        return bool(np.any(np.linalg.norm(self.hazards - position, axis=1) <= self.hazard_radius))

    def lidar(self, position: np.ndarray) -> np.ndarray:
        """Distance along each beam to the nearest hazard boundary, saturated at the sensor range."""
        readings = np.full(self.lidar_beams, self.lidar_range)
        if len(self.hazards) == 0:
            return readings
        if self.in_hazard(position):
            return np.zeros(self.lidar_beams)
        offsets = self.hazards - position                        # (H, 2)
        along = self._beam_directions @ offsets.T                  # (B, H)
        excess = np.sum(offsets ** 2, axis=1) - self.hazard_radius ** 2
        discriminant = along ** 2 - excess
        hit = (discriminant >= 0.0) & (along > 0.0)
        distances = np.where(hit, along - np.sqrt(np.where(hit, discriminant, 0.0)), np.inf)
        return np.minimum(readings, distances.min(axis=1))

    def goal_direction(self, position: np.ndarray) -> np.ndarray:
        offset = self.goal - position
        distance = np.linalg.norm(offset)
        return offset / distance if distance > 0 else np.zeros(2)

    def observe(self, state: PointState) -> np.ndarray:
        return np.concatenate([state.position, state.velocity, self.goal_direction(state.position),
                               self.lidar(state.position)])

    def reward(self, state: PointState, next_state: PointState) -> float:
        progress = np.linalg.norm(self.goal - state.position) - np.linalg.norm(self.goal - next_state.position)
        bonus = self.goal_bonus if self.is_terminal(next_state) else 0.0
        return float(progress + bonus)

    def cost(self, state: PointState, next_state: PointState) -> float:
        return float(self.in_hazard(next_state.position))

    def is_terminal(self, next_state: PointState) -> bool:
        return bool(np.linalg.norm(self.goal - next_state.position) <= self.goal_radius)
