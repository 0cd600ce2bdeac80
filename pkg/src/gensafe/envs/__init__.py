"""Desk-scale constrained environments."""
from gensafe.envs.base import PointMassEnv, PointState, available_envs, make_env, register_env
from gensafe.envs.hazard_goal import HazardGoalEnv
from gensafe.envs.point_circle import PointCircleEnv

__all__ = [
    "HazardGoalEnv",
    "PointCircleEnv",
    "PointMassEnv",
    "PointState",
    "available_envs",
    "make_env",
    "register_env",
]
