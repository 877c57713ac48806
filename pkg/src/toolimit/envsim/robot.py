"""Joint-velocity control of a task environment through a kinematic chain.

The observation is ``[tool position (3), tool quaternion (4), q (N), t / H]``
followed, when object randomization is active, by the xyz of every
randomized object in the order given by ``observe_objects``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import matrix_to_quat
from ..kinematics import BaseMount, KinematicChain, ToolPose, tool_transform
from ..scene import SceneParams
from .core import EnvConfig, EpisodeTrace, StepOutcome
from .tasks import make_env


def velocity_penalty(v, limits, coef: float = 1.0) -> float:
    """``coef * sum(max(0, |v_i| - limit_i)^2)``."""
    excess = np.maximum(0.0, np.abs(np.asarray(v, dtype=float)) - limits)
    return float(coef * np.sum(excess * excess))


@dataclass
class RobotEnv:
    config: EnvConfig
    params: SceneParams
    chain: KinematicChain
    base: BaseMount
    q0: np.ndarray
    velocity_coef: float = 1.0
    reward_mode: str = "sparse"
    observe_objects: tuple = ()
    offsets: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reward_mode not in ("sparse", "dense"):
            raise ValueError("reward_mode must be 'sparse' or 'dense'")
        self.q0 = np.asarray(self.q0, dtype=float)
        if self.q0.shape != (self.chain.dof,):
            raise ValueError("q0 does not match the chain's dof")
        self.limits = self.chain.velocity_limits
        self.task = None
        self.trace = None

    @property
    def state_dim(self) -> int:
        return 7 + self.chain.dof + 1 + 3 * len(self.observe_objects)

    @property
    def action_dim(self) -> int:
        return self.chain.dof

    def tool_T(self, q) -> np.ndarray:
        return tool_transform(self.chain, self.base, q)

    def _observe(self) -> np.ndarray:
        T = self.tool_T(self.q)
        quat = matrix_to_quat(T[:3, :3])
        if float(np.dot(quat, self._quat_ref)) < 0.0:
            quat = -quat
        parts = [T[:3, 3], quat, self.q, [self.t / self.config.horizon]]
        for name in self.observe_objects:
            parts.append(self.task.params.object_positions[name])
        return np.concatenate(parts)

    def reset(self, seed: int | None = None, offsets: dict | None = None) -> np.ndarray:
        if offsets is not None:
            self.offsets = dict(offsets)
        params = self.params.with_offsets(self.offsets) if self.offsets else self.params
        self.task = make_env(self.config, params)
        self.q = self.q0.copy()
        self.t = 0
        T = self.tool_T(self.q)
        self._quat_ref = matrix_to_quat(T[:3, :3])
        self.task.reset(seed, T)
        self.trace = EpisodeTrace(self.config.kind, self.config.horizon, self.config.control_dt)
        return self._observe()

    def step(self, action):
        a = np.asarray(action, dtype=float)
        if a.shape != (self.chain.dof,):
            raise ValueError(f"action must have shape ({self.chain.dof},)")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action")
        self.q = self.q + a * self.config.control_dt
        self.t += 1
        T = self.tool_T(self.q)
        out: StepOutcome = self.task.step_tool(T)
        self.trace.record(ToolPose.from_transform(T), out)
        penalty = velocity_penalty(a, self.limits, self.velocity_coef)
        base = out.goal_reward if self.reward_mode == "sparse" else out.dense_reward
        info = dict(out.info)
        info.update(goal_reward=out.goal_reward, dense_reward=out.dense_reward, penalty=penalty,
                    violation=bool(np.any(np.abs(a) > self.limits)))
        return self._observe(), base - penalty, out.done, info
