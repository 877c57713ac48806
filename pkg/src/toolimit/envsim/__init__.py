"""Simplified physics environments for tool use."""

from ..geometry import quat_geodesic_distance
from .core import (KINDS, EnvConfig, EpisodeTrace, StepOutcome, hammer_dense_reward,
                   scythe_dense_reward, spade_dense_reward, success)
from .robot import RobotEnv, velocity_penalty
from .tasks import (EnvState, HammerEnv, SceneError, ScytheEnv, SpadeEnv, TaskEnv, make_env,
                    pose_stack, reset, step_tool)

__all__ = [
    "KINDS", "EnvConfig", "EnvState", "EpisodeTrace", "HammerEnv", "RobotEnv", "SceneError",
    "ScytheEnv", "SpadeEnv", "StepOutcome", "TaskEnv", "hammer_dense_reward", "make_env",
    "pose_stack", "quat_geodesic_distance", "reset", "scythe_dense_reward", "spade_dense_reward",
    "step_tool", "success", "velocity_penalty",
]
