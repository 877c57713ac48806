"""Environment configuration, step outcomes, episode traces and reward formulas."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import make_transform, quat_geodesic_distance, quat_to_matrix
from ..kinematics import ToolPose

KINDS = ("spade", "hammer", "scythe")


@dataclass
class EnvConfig:
    kind: str = "spade"
    control_dt: float = 1.0 / 24.0
    substeps: int = 10
    horizon: int = 120
    gravity: float = 9.81
    seed: int = 0
    # reference point -> tool head, along the tool axis (m)
    head_offset: float = 0.0
    dense_length_scale: float = 5.0
    success_time: float = 1.0
    # spade
    spheres: int = 20
    sphere_radius: float = 0.03
    friction: float = 1.0
    goal_box: tuple = (0.4, 0.4, 0.2)
    deposit: tuple = (0.3, 0.3, 0.08)
    wall_thickness: float = 0.02
    floor_thickness: float = 0.04
    blade: tuple = (0.26, 0.26, 0.02)
    blade_center: float = -0.12
    success_spheres: int = 10
    spawn_jitter: float = 0.004
    # hammer
    nail_travel: float = 0.1
    nail_head_radius: float = 0.012
    hammer_head: tuple = (0.06, 0.06, 0.06)
    kappa: float = 1.0
    strike_speed: float = 0.5
    planted_tol: float = 0.001
    # scythe
    grass_count: int = 16
    grass_size: tuple = (0.02, 0.02, 0.3)
    patch: tuple = (0.6, 0.6)
    z_max: float = 0.05
    v_min: float = 0.5
    scythe_blade: float = 0.8
    scythe_blade_thickness: float = 0.01
    reference_rotation: tuple = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if not self.control_dt > 0:
            raise ValueError("control_dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def success_steps(self) -> int:
        return int(round(self.success_time / self.control_dt))

    def head_transform(self) -> np.ndarray:
        return make_transform(p=[self.head_offset, 0.0, 0.0])


@dataclass
class StepOutcome:
    goal_reward: float
    dense_reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass
class EpisodeTrace:
    kind: str
    horizon: int
    control_dt: float
    tool_positions: list = field(default_factory=list)
    tool_orientations: list = field(default_factory=list)
    goal_rewards: list = field(default_factory=list)
    dense_rewards: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    def record(self, pose: ToolPose, outcome: StepOutcome) -> None:
        self.tool_positions.append(np.asarray(pose.position, dtype=float))
        self.tool_orientations.append(np.asarray(pose.orientation, dtype=float))
        self.goal_rewards.append(float(outcome.goal_reward))
        self.dense_rewards.append(float(outcome.dense_reward))
        for key, value in outcome.info.items():
            self.counters.setdefault(key, []).append(value)

    def __len__(self) -> int:
        return len(self.goal_rewards)

    @property
    def goal_return(self) -> float:
        return float(np.sum(self.goal_rewards))

    def dump(self, path) -> None:
        keys = sorted(self.counters)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "x", "y", "z", "qw", "qx", "qy", "qz", "goal_reward", "dense_reward", *keys])
            for t in range(len(self)):
                w.writerow([t, *(repr(float(v)) for v in self.tool_positions[t]),
                            *(repr(float(v)) for v in self.tool_orientations[t]),
                            repr(self.goal_rewards[t]), repr(self.dense_rewards[t]),
                            *(repr(self.counters[k][t]) for k in keys)])

    @classmethod
    def load(cls, path, kind: str, horizon: int, control_dt: float) -> "EpisodeTrace":
        trace = cls(kind, horizon, control_dt)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        keys = header[10:]
        for row in body:
            trace.tool_positions.append(np.array([float(v) for v in row[1:4]]))
            trace.tool_orientations.append(np.array([float(v) for v in row[4:8]]))
            trace.goal_rewards.append(float(row[8]))
            trace.dense_rewards.append(float(row[9]))
            for k, v in zip(keys, row[10:]):
                num = float(v)
                trace.counters.setdefault(k, []).append(int(num) if num.is_integer() and k != "nail_depth" else num)
        return trace


def success(trace: EpisodeTrace, kind: str | None = None, *, spheres_needed: int = 10,
            success_time: float = 1.0, planted_tol: float = 0.001) -> bool:
    """Per-environment success predicates evaluated on a finished episode.

    spade: at least ``spheres_needed`` spheres inside the goal box for at least
    half of the horizon. hammer: nail planted within the first second.
    scythe: every grass element cut within the first second (inclusive).
    """
    kind = kind or trace.kind
    limit = int(round(success_time / trace.control_dt))
    if len(trace) == 0:
        return False
    if kind == "spade":
        in_box = np.asarray(trace.counters["in_box"])
        return bool(2 * int(np.sum(in_box >= spheres_needed)) >= trace.horizon)
    if kind == "hammer":
        depth = np.asarray(trace.counters["nail_depth"], dtype=float)
        hits = np.flatnonzero(depth < planted_tol)
        return bool(hits.size > 0 and hits[0] + 1 <= limit)
    if kind == "scythe":
        cut = np.asarray(trace.counters["cut"])
        total = np.asarray(trace.counters["total"])
        done = np.flatnonzero(cut >= total)
        return bool(done.size > 0 and done[0] + 1 <= limit)
    raise ValueError(f"unknown environment kind {kind!r}")


def _expd(b, d):
    return math.exp(-0.5 * b * d)


def spade_dense_reward(tool_tip, deposit, goal, spheres, b: float, horizon: int) -> float:
    spheres = np.asarray(spheres, dtype=float)
    K = spheres.shape[0]
    r = _expd(b, float(np.linalg.norm(np.asarray(tool_tip) - deposit))) / horizon
    dists = np.linalg.norm(spheres - np.asarray(goal), axis=1)
    return r + float(np.sum(np.exp(-0.5 * b * dists))) / (horizon * K)


def hammer_dense_reward(tool_tip, nail, b: float, horizon: int) -> float:
    return _expd(b, float(np.linalg.norm(np.asarray(tool_tip) - nail))) / horizon


def scythe_dense_reward(t: int, tool_tip, tool_quat, point_a, point_b, ref_quat,
                        b: float, horizon: int) -> float:
    tip = np.asarray(tool_tip)
    if t < horizon / 2:
        r = _expd(b, float(np.linalg.norm(tip - point_a))) / horizon
    else:
        r = _expd(b, float(np.linalg.norm(tip - point_b))) / horizon
    return r + _expd(b, quat_geodesic_distance(tool_quat, ref_quat)) / horizon


def as_transform(pose) -> np.ndarray:
    """Accept a ToolPose or a 4x4 transform; reject non-finite input."""
    if isinstance(pose, ToolPose):
        T = make_transform(quat_to_matrix(pose.orientation), pose.position)
    else:
        T = np.asarray(pose, dtype=float)
        if T.shape != (4, 4):
            raise ValueError("tool pose must be a ToolPose or a 4x4 transform")
    if not np.all(np.isfinite(T)):
        raise ValueError("non-finite tool pose")
    return np.ascontiguousarray(T)
