"""Spade, hammer and scythe environments driven by a kinematic tool.

Every object position in :class:`~toolimit.scene.SceneParams` is a support
point: the floor-top centre of the deposit and of the goal box, the point the
nail is driven to, and the ground-level centre of the grass patch. Objects
are free-standing platforms; there is no ground plane, only a kill plane one
metre below the lowest object where lost spheres are frozen.

Tool poses are poses of the tool reference frame (x axis along the tool,
tail to head). The head sits ``config.head_offset`` metres along x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import matrix_to_quat, rot_z
from ..kinematics import ToolPose
from ..scene import SceneParams
from . import physics
from .core import (EnvConfig, EpisodeTrace, StepOutcome, as_transform,
                   hammer_dense_reward, scythe_dense_reward, spade_dense_reward)


class SceneError(ValueError):
    """Scene parameters that cannot be turned into a valid environment."""


@dataclass
class EnvState:
    kind: str
    t: int
    tool: np.ndarray
    prev_tool: np.ndarray
    done: bool = False
    sphere_pos: np.ndarray | None = None
    sphere_vel: np.ndarray | None = None
    awake: np.ndarray | None = None
    delivered: np.ndarray | None = None
    nail_depth: float | None = None
    grass_xy: np.ndarray | None = None
    cut: np.ndarray | None = None

    def copy(self) -> "EnvState":
        def dup(x):
            return x.copy() if isinstance(x, np.ndarray) else x
        return EnvState(**{k: dup(v) for k, v in self.__dict__.items()})


def pose_stack(poses) -> np.ndarray:
    """(n, 4, 4) reference-frame transforms from a PoseSequence, list or array."""
    if hasattr(poses, "positions") and hasattr(poses, "rotations"):
        n = len(poses)
        T = np.tile(np.eye(4), (n, 1, 1))
        T[:, :3, :3] = poses.rotations
        T[:, :3, 3] = poses.positions
    elif isinstance(poses, np.ndarray) and poses.ndim == 3:
        T = np.array(poses, dtype=float)
    else:
        T = np.stack([as_transform(p) for p in poses])
    if not np.all(np.isfinite(T)):
        raise ValueError("non-finite tool pose")
    return np.ascontiguousarray(T)


def _yaw_box(center, yaw, local_center, half):
    R = rot_z(yaw)
    return np.asarray(center) + R @ np.asarray(local_center), R, np.asarray(half, dtype=float)


class TaskEnv:
    """Common reset/step plumbing; subclasses implement the physics hooks."""

    kind = ""
    required: tuple = ()

    def __init__(self, config: EnvConfig, params: SceneParams):
        if config.kind != self.kind:
            raise ValueError(f"{type(self).__name__} needs config.kind == {self.kind!r}")
        missing = [o for o in self.required if o not in params.object_positions]
        if missing:
            raise SceneError(f"{self.kind} scene is missing objects: {', '.join(missing)}")
        self.config = config
        self.params = params
        self._head = config.head_transform()
        self.state: EnvState | None = None
        self._build()

    # -- hooks -------------------------------------------------------------
    def _build(self):
        pass

    def _initial(self, rng, state):
        pass

    def _advance(self, T_prev, T_new):
        raise NotImplementedError

    def _dense(self, t, T_ref):
        raise NotImplementedError

    # -- public API ----------------------------------------------------------
    def head_pose(self, T_ref) -> np.ndarray:
        return T_ref @ self._head

    def reset(self, seed: int | None = None, tool_pose=None) -> EnvState:
        seed = self.config.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        T = np.eye(4) if tool_pose is None else as_transform(tool_pose)
        self.state = EnvState(self.kind, 0, T, T.copy())
        self._has_pose = tool_pose is not None
        self._initial(rng, self.state)
        return self.state

    def place_tool(self, tool_pose) -> None:
        """Teleport the tool without advancing time (used before the first step)."""
        T = as_transform(tool_pose)
        self.state.tool = T
        self.state.prev_tool = T.copy()
        self._has_pose = True

    def step_tool(self, tool_pose) -> StepOutcome:
        st = self.state
        if st is None:
            raise RuntimeError("call reset() before step_tool()")
        if st.done:
            raise RuntimeError("episode is over; call reset()")
        T_new = as_transform(tool_pose)
        T_prev = st.tool if self._has_pose else T_new
        self._has_pose = True
        reward, info = self._advance(self.head_pose(T_prev), self.head_pose(T_new))
        st.prev_tool = T_prev
        st.tool = T_new
        st.t += 1
        terminal = bool(info.pop("_terminal", False))
        st.done = terminal or st.t >= self.config.horizon
        dense = self._dense(st.t - 1, T_new)
        return StepOutcome(float(reward), float(dense), st.done, info)

    def run(self, poses, seed: int | None = None) -> EpisodeTrace:
        """Reset at ``poses[0]`` and step through the remaining poses."""
        T = pose_stack(poses)
        self.reset(seed, T[0])
        trace = EpisodeTrace(self.kind, self.config.horizon, self.config.control_dt)
        for k in range(1, T.shape[0]):
            out = self.step_tool(T[k])
            trace.record(ToolPose.from_transform(T[k]), out)
            if out.done:
                break
        return trace

    def goal_return(self, poses, seed: int | None = None) -> float:
        """Total sparse reward of a kinematic replay, computed in one compiled call."""
        return float(self.run(poses, seed).goal_return)


def make_env(config: EnvConfig, params: SceneParams) -> TaskEnv:
    return {"spade": SpadeEnv, "hammer": HammerEnv, "scythe": ScytheEnv}[config.kind](config, params)


def reset(config: EnvConfig, params: SceneParams, seed: int | None = None, tool_pose=None):
    """Functional entry point: build an environment and return it with its initial state."""
    env = make_env(config, params)
    return env, env.reset(seed, tool_pose)


def step_tool(env: TaskEnv, tool_pose):
    out = env.step_tool(tool_pose)
    return env.state, out


# -- spade -------------------------------------------------------------------

class SpadeEnv(TaskEnv):
    """Spheres in a three-walled deposit, to be carried into a goal box."""

    kind = "spade"
    required = ("deposit", "goal")

    def _build(self):
        c = self.config
        dep = self.params.object_positions["deposit"]
        goal = self.params.object_positions["goal"]
        dyaw = self.params.object_yaws.get("deposit", 0.0)
        gyaw = self.params.object_yaws.get("goal", 0.0)
        wt, ft = c.wall_thickness, c.floor_thickness
        dx, dy, dh = 0.5 * c.deposit[0], 0.5 * c.deposit[1], c.deposit[2]
        gx, gy, gh = 0.5 * c.goal_box[0], 0.5 * c.goal_box[1], c.goal_box[2]
        boxes = [
            # deposit: floor and three walls, open towards local +x
            (dep, dyaw, (0.0, 0.0, -0.5 * ft), (dx + wt, dy + wt, 0.5 * ft)),
            (dep, dyaw, (-dx - 0.5 * wt, 0.0, 0.5 * dh), (0.5 * wt, dy + wt, 0.5 * dh)),
            (dep, dyaw, (0.0, dy + 0.5 * wt, 0.5 * dh), (dx + wt, 0.5 * wt, 0.5 * dh)),
            (dep, dyaw, (0.0, -dy - 0.5 * wt, 0.5 * dh), (dx + wt, 0.5 * wt, 0.5 * dh)),
            # goal box: floor and four walls
            (goal, gyaw, (0.0, 0.0, -0.5 * ft), (gx + wt, gy + wt, 0.5 * ft)),
            (goal, gyaw, (-gx - 0.5 * wt, 0.0, 0.5 * gh), (0.5 * wt, gy + wt, 0.5 * gh)),
            (goal, gyaw, (gx + 0.5 * wt, 0.0, 0.5 * gh), (0.5 * wt, gy + wt, 0.5 * gh)),
            (goal, gyaw, (0.0, gy + 0.5 * wt, 0.5 * gh), (gx + wt, 0.5 * wt, 0.5 * gh)),
            (goal, gyaw, (0.0, -gy - 0.5 * wt, 0.5 * gh), (gx + wt, 0.5 * wt, 0.5 * gh)),
        ]
        built = [_yaw_box(*b) for b in boxes]
        self.static_c = np.ascontiguousarray([b[0] for b in built])
        self.static_R = np.ascontiguousarray([b[1] for b in built])
        self.static_h = np.ascontiguousarray([b[2] for b in built])
        self.goal_c, self.goal_R, self.goal_h = _yaw_box(goal, gyaw, (0.0, 0.0, 0.5 * gh), (gx, gy, 0.5 * gh))
        self.goal_center = self.goal_c.copy()
        self.deposit = dep
        self.kill_z = min(dep[2], goal[2]) - 1.0
        self.blade_local = np.array([c.blade_center, 0.0, 0.0])
        self.blade_h = 0.5 * np.asarray(c.blade, dtype=float)
        # structures may not interpenetrate
        r_dep = math.hypot(dx + wt, dy + wt)
        r_goal = math.hypot(gx + wt, gy + wt)
        horiz = float(np.linalg.norm(dep[:2] - goal[:2]))
        z_overlap = (dep[2] - ft < goal[2] + gh) and (goal[2] - ft < dep[2] + dh)
        if horiz < r_dep + r_goal and z_overlap:
            raise SceneError("deposit and goal box overlap")
        self.spawn_cells = self._cells(dep, dyaw, dx, dy)

    def _cells(self, dep, yaw, dx, dy):
        r = self.config.sphere_radius
        nx = max(1, int((2 * dx) // (2 * r)))
        ny = max(1, int((2 * dy) // (2 * r)))
        if nx * ny < self.config.spheres:
            raise SceneError("deposit too small for the configured sphere count")
        xs = -dx + (2 * dx) * (np.arange(nx) + 0.5) / nx
        ys = -dy + (2 * dy) * (np.arange(ny) + 0.5) / ny
        local = np.array([(x, y, r) for x in xs for y in ys])
        return dep + local @ rot_z(yaw).T

    def _initial(self, rng, st):
        c = self.config
        order = rng.permutation(len(self.spawn_cells))[: c.spheres]
        pos = self.spawn_cells[np.sort(order)].copy()
        jitter = rng.uniform(-c.spawn_jitter, c.spawn_jitter, size=(c.spheres, 2))
        pos[:, :2] += jitter
        st.sphere_pos = np.ascontiguousarray(pos)
        st.sphere_vel = np.zeros_like(pos)
        st.awake = np.zeros(c.spheres, dtype=np.bool_)
        st.delivered = np.zeros(c.spheres, dtype=np.bool_)

    def _advance(self, T_prev, T_new):
        c, st = self.config, self.state
        newly, pen = physics.spade_control_step(
            st.sphere_pos, st.sphere_vel, st.awake, st.delivered, self.static_c, self.static_R,
            self.static_h, self.goal_c, self.goal_R, self.goal_h, T_prev, T_new, self.blade_local,
            self.blade_h, c.sphere_radius, c.friction, c.gravity, c.control_dt, c.substeps,
            self.kill_z, 0.01)
        if not np.all(np.isfinite(st.sphere_pos)) or not np.all(np.isfinite(st.sphere_vel)):
            raise FloatingPointError("spade simulation produced non-finite sphere state")
        in_box = physics.count_in_box(st.sphere_pos, self.goal_c, self.goal_R, self.goal_h)
        return newly, {"in_box": int(in_box), "delivered": int(st.delivered.sum()),
                       "penetration": float(pen)}

    def _dense(self, t, T_ref):
        c = self.config
        tip = self.head_pose(T_ref)[:3, 3]
        return spade_dense_reward(tip, self.deposit, self.goal_center, self.state.sphere_pos,
                                  c.dense_length_scale, c.horizon)

    def goal_return(self, poses, seed=None):
        c = self.config
        T = pose_stack(poses)
        self.reset(seed, T[0])
        st = self.state
        heads = np.ascontiguousarray(T[: c.horizon + 1] @ self._head)
        rewards, _ = physics.spade_rollout(
            heads, st.sphere_pos, st.sphere_vel, st.awake, st.delivered, self.static_c,
            self.static_R, self.static_h, self.goal_c, self.goal_R, self.goal_h, self.blade_local,
            self.blade_h, c.sphere_radius, c.friction, c.gravity, c.control_dt, c.substeps,
            self.kill_z, 0.01)
        if not np.all(np.isfinite(st.sphere_pos)):
            raise FloatingPointError("spade simulation produced non-finite sphere state")
        return float(rewards.sum())


# -- hammer ------------------------------------------------------------------

class HammerEnv(TaskEnv):
    """A nail sticking ``nail_travel`` metres out; a fast downward strike drives it in."""

    kind = "hammer"
    required = ("nail",)

    def _build(self):
        self.nail = np.ascontiguousarray(self.params.object_positions["nail"])
        self.head_local = np.zeros(3)
        self.head_h = 0.5 * np.asarray(self.config.hammer_head, dtype=float)

    def _initial(self, rng, st):
        st.nail_depth = float(self.config.nail_travel)

    def _advance(self, T_prev, T_new):
        c, st = self.config, self.state
        depth = physics.hammer_control_step(
            st.nail_depth, self.nail, c.nail_head_radius, T_prev, T_new, self.head_local,
            self.head_h, c.kappa, c.strike_speed, c.control_dt, c.substeps, c.nail_travel)
        st.nail_depth = float(depth)
        planted = depth < c.planted_tol
        return (1.0 if planted else 0.0), {"nail_depth": float(depth), "_terminal": planted}

    def _dense(self, t, T_ref):
        c = self.config
        tip = self.head_pose(T_ref)[:3, 3]
        return hammer_dense_reward(tip, self.nail, c.dense_length_scale, c.horizon)

    def goal_return(self, poses, seed=None):
        c = self.config
        T = pose_stack(poses)
        self.reset(seed, T[0])
        heads = np.ascontiguousarray(T[: c.horizon + 1] @ self._head)
        rewards, depths = physics.hammer_rollout(
            heads, self.state.nail_depth, self.nail, c.nail_head_radius, self.head_local,
            self.head_h, c.kappa, c.strike_speed, c.control_dt, c.substeps, c.nail_travel,
            c.planted_tol)
        return float(rewards.sum())


# -- scythe ------------------------------------------------------------------

class ScytheEnv(TaskEnv):
    """Thin vertical grass elements scattered over a patch; cut by a low, fast blade."""

    kind = "scythe"
    required = ("grass",)

    def _build(self):
        c = self.config
        self.patch_center = np.asarray(self.params.object_positions["grass"], dtype=float)
        self.patch_yaw = self.params.object_yaws.get("grass", 0.0)
        self.ground_z = float(self.patch_center[2])
        self.a_local = np.zeros(3)
        self.b_local = np.array([0.0, -c.scythe_blade, 0.0])
        R = rot_z(self.patch_yaw)
        half = 0.5 * c.patch[0] + 0.1
        mid = np.array([0.0, 0.0, 0.5 * c.z_max])
        self.point_a = self.patch_center + R @ (mid + [-half, 0.0, 0.0])
        self.point_b = self.patch_center + R @ (mid + [half, 0.0, 0.0])
        self.ref_quat = np.asarray(c.reference_rotation, dtype=float)
        self.ref_quat = self.ref_quat / np.linalg.norm(self.ref_quat)

    def _initial(self, rng, st):
        c = self.config
        local = rng.uniform(-0.5, 0.5, size=(c.grass_count, 2)) * np.asarray(c.patch)
        R = rot_z(self.patch_yaw)[:2, :2]
        st.grass_xy = np.ascontiguousarray(self.patch_center[:2] + local @ R.T)
        st.cut = np.zeros(c.grass_count, dtype=np.bool_)

    def _advance(self, T_prev, T_new):
        c, st = self.config, self.state
        newly = physics.scythe_control_step(
            st.grass_xy, st.cut, self.ground_z, 0.5 * c.grass_size[0], c.grass_size[2], T_prev,
            T_new, self.a_local, self.b_local, 0.5 * c.scythe_blade_thickness, c.z_max, c.v_min,
            c.control_dt, c.substeps)
        return newly, {"cut": int(st.cut.sum()), "total": int(c.grass_count)}

    def _dense(self, t, T_ref):
        c = self.config
        H = self.head_pose(T_ref)
        return scythe_dense_reward(t, H[:3, 3], matrix_to_quat(H[:3, :3]), self.point_a,
                                   self.point_b, self.ref_quat, c.dense_length_scale, c.horizon)

    def goal_return(self, poses, seed=None):
        c = self.config
        T = pose_stack(poses)
        self.reset(seed, T[0])
        heads = np.ascontiguousarray(T[: c.horizon + 1] @ self._head)
        rewards = physics.scythe_rollout(
            heads, self.state.grass_xy, self.state.cut, self.ground_z, 0.5 * c.grass_size[0],
            c.grass_size[2], self.a_local, self.b_local, 0.5 * c.scythe_blade_thickness,
            c.z_max, c.v_min, c.control_dt, c.substeps)
        return float(rewards.sum())
