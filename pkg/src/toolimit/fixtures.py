"""Synthetic tool trajectories generated from known scenes.

Each builder returns a :class:`Fixture`: the trajectory a video would have
produced, the ground-truth scene it was generated from, and the environment
configuration and parameter bounds that go with it. Motions are composed of
minimum-jerk segments sampled at 24 Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envsim.core import EnvConfig
from .geometry import axis_angle_matrix, matrix_to_quat
from .scene import ParamBounds, SceneParams
from .trajectory import AlignmentTransform, ToolTrajectory, extract_keypoints

DT = 1.0 / 24.0


@dataclass
class Fixture:
    name: str
    trajectory: ToolTrajectory
    params: SceneParams
    env: EnvConfig
    bounds: ParamBounds = field(default_factory=ParamBounds)
    tool_length: float = 0.6


def min_jerk(n_frames: int, start: int, end: int) -> np.ndarray:
    """Progress in [0, 1] per frame for a minimum-jerk move between two frames."""
    t = np.arange(n_frames, dtype=float)
    s = np.clip((t - start) / max(end - start, 1), 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def cruise(n_frames: int, start: int, end: int, ramp: int) -> np.ndarray:
    """Progress in [0, 1] with smooth speed ramps of ``ramp`` frames and constant speed between."""
    t = np.arange(n_frames, dtype=float)
    up = min_jerk(n_frames, start, start + ramp)
    down = 1.0 - min_jerk(n_frames, end - ramp, end)
    speed = np.minimum(up, down) * ((t >= start) & (t <= end))
    pos = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]))])
    return pos / pos[-1]


def _segment(heads, directions, length):
    return ToolTrajectory(DT, heads, heads - length * directions, reference="head")


def _identity_transform(traj):
    return AlignmentTransform(1.0, 0.0, np.zeros(extract_keypoints(traj).n_segments))


def spade_fixture(n_frames: int = 121, tool_length: float = 0.6) -> Fixture:
    """Scoop from below the deposit floor, carry sideways, tip the blade over the goal box."""
    deposit = np.array([0.9, -0.35, 0.30])
    goal = np.array([0.97, 0.35, 0.15])
    cfg = EnvConfig(kind="spade", head_offset=0.0)
    blade_len = cfg.blade[0]
    start = deposit + np.array([0.5 * blade_len, 0.0, -0.08])
    lift = min_jerk(n_frames, 3, 18)
    carry = min_jerk(n_frames, 12, 32)
    tip = min_jerk(n_frames, 30, 46)
    heads = np.tile(start, (n_frames, 1))
    heads[:, 2] += 0.25 * lift
    heads[:, 0] += (goal[0] - start[0]) * carry
    heads[:, 1] += (goal[1] - start[1]) * carry
    # pitch the head down by up to 60 degrees about the head point
    tilt = math.radians(60.0) * tip
    directions = np.column_stack([np.cos(tilt), np.zeros(n_frames), -np.sin(tilt)])
    traj = _segment(heads, directions, tool_length)
    params = SceneParams({"deposit": deposit, "goal": goal}, {}, _identity_transform(traj))
    return Fixture("spade", traj, params, cfg, ParamBounds(), tool_length)


def hammer_fixture(n_frames: int = 121, tool_length: float = 0.35) -> Fixture:
    """Raise the hammer, strike the nail once, lift off and hold."""
    nail = np.array([0.55, 0.0, 0.20])
    cfg = EnvConfig(kind="hammer", head_offset=0.0)
    above = nail + np.array([0.0, 0.0, 0.10 + 0.5 * cfg.hammer_head[2] + 0.10])
    bottom = nail + np.array([0.0, 0.0, -0.03])
    heads = np.tile(above, (n_frames, 1))
    # accelerating strike that is still fast at the bottom, then a slow lift
    strike = np.clip((np.arange(n_frames) - 6) / 8.0, 0.0, 1.0) ** 1.5
    heads[:, 2] += (bottom[2] - above[2]) * strike + (above[2] - bottom[2]) * min_jerk(n_frames, 16, 40)
    # handle horizontal, head towards +x
    directions = np.tile([1.0, 0.0, 0.0], (n_frames, 1))
    traj = _segment(heads, directions, tool_length)
    params = SceneParams({"nail": nail}, {}, _identity_transform(traj))
    return Fixture("hammer", traj, params, cfg, ParamBounds(), tool_length)


def scythe_fixture(n_frames: int = 121, tool_length: float = 0.6) -> Fixture:
    """One fast low sweep across the patch at constant speed, then a slow return."""
    patch = np.array([0.6, 0.0, 0.10])
    cfg = EnvConfig(kind="scythe", head_offset=0.0)
    blade_y = 0.5 * cfg.scythe_blade
    start = patch + np.array([-0.47, blade_y, 0.5 * cfg.z_max])
    end = patch + np.array([0.47, blade_y, 0.5 * cfg.z_max])
    sweep = cruise(n_frames, 0, 22, 5)
    back = min_jerk(n_frames, 40, 100)
    heads = start + np.outer(sweep - back, end - start)
    heads[:, 2] += 0.15 * min_jerk(n_frames, 22, 34) - 0.15 * min_jerk(n_frames, 100, 118)
    # handle slopes down towards the head; blade then lies along world -y
    d = np.array([math.cos(math.radians(40.0)), 0.0, -math.sin(math.radians(40.0))])
    directions = np.tile(d, (n_frames, 1))
    traj = _segment(heads, directions, tool_length)
    params = SceneParams({"grass": patch}, {}, _identity_transform(traj))
    R = axis_angle_matrix([0.0, 1.0, 0.0], math.radians(40.0))
    cfg.reference_rotation = tuple(float(v) for v in matrix_to_quat(R))
    return Fixture("scythe", traj, params, cfg, ParamBounds(), tool_length)


FIXTURES = {"spade": spade_fixture, "hammer": hammer_fixture, "scythe": scythe_fixture}
