"""Tool trajectories: file I/O, speed profile, keypoints and alignment transforms.

Trajectory file layout (plain text, whitespace delimited)::

    # toolimit tool trajectory
    dt 0.041666666666666664
    # index head_x head_y head_z tail_x tail_y tail_z
    0 0.1 0.0 0.5 -0.4 0.0 0.8
    1 ...

``head`` is the working end of the tool (blade, hammer head), ``tail`` the
handle end. Values are written with ``repr`` so save/load is bit exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import axis_angle_matrix, matrix_to_quat, rot_x

SCALES = (0.5, 0.75, 1.0)
REFERENCE_POINTS = ("midpoint", "head", "tail")
HIGH = "high"
LOW = "low"


class TrajectoryFormatError(ValueError):
    """Malformed trajectory file."""


@dataclass(frozen=True)
class ToolTrajectory:
    dt: float
    heads: np.ndarray
    tails: np.ndarray
    reference: str = "midpoint"

    def __post_init__(self):
        heads = np.asarray(self.heads, dtype=float)
        tails = np.asarray(self.tails, dtype=float)
        if heads.ndim != 2 or heads.shape[1] != 3 or heads.shape != tails.shape:
            raise ValueError("heads and tails must both have shape (n, 3)")
        if heads.shape[0] < 2:
            raise ValueError("a trajectory needs at least 2 frames")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not (np.all(np.isfinite(heads)) and np.all(np.isfinite(tails))):
            raise ValueError("trajectory contains non-finite coordinates")
        if np.any(np.linalg.norm(heads - tails, axis=1) == 0.0):
            raise ValueError("tool segment has zero length in some frame")
        if self.reference not in REFERENCE_POINTS:
            raise ValueError(f"reference must be one of {REFERENCE_POINTS}")
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "tails", tails)

    @property
    def n_frames(self) -> int:
        return self.heads.shape[0]

    def reference_points(self) -> np.ndarray:
        if self.reference == "head":
            return self.heads.copy()
        if self.reference == "tail":
            return self.tails.copy()
        return 0.5 * (self.heads + self.tails)

    def directions(self) -> np.ndarray:
        """Unit tail-to-head direction per frame."""
        d = self.heads - self.tails
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.heads - self.tails, axis=1)


def save_trajectory(traj: ToolTrajectory, path) -> None:
    lines = ["# toolimit tool trajectory", f"dt {traj.dt!r}",
             "# index head_x head_y head_z tail_x tail_y tail_z"]
    for i in range(traj.n_frames):
        vals = " ".join(repr(float(v)) for v in (*traj.heads[i], *traj.tails[i]))
        lines.append(f"{i} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path, reference: str = "midpoint") -> ToolTrajectory:
    dt = None
    heads, tails = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "dt":
            try:
                dt = float(tokens[1])
            except (IndexError, ValueError):
                raise TrajectoryFormatError(f"line {lineno}: bad dt record") from None
            if not (math.isfinite(dt) and dt > 0):
                raise TrajectoryFormatError(f"line {lineno}: dt must be positive and finite")
            continue
        if len(tokens) != 7:
            raise TrajectoryFormatError(f"line {lineno}: expected 7 columns, got {len(tokens)}")
        try:
            vals = [float(t) for t in tokens[1:]]
        except ValueError:
            raise TrajectoryFormatError(f"line {lineno}: non-numeric value") from None
        if not all(math.isfinite(v) for v in vals):
            raise TrajectoryFormatError(f"line {lineno}: non-finite coordinate")
        if vals[:3] == vals[3:]:
            raise TrajectoryFormatError(f"line {lineno}: head and tail coincide")
        heads.append(vals[:3])
        tails.append(vals[3:])
    if dt is None:
        raise TrajectoryFormatError("missing dt record")
    if len(heads) < 2:
        raise TrajectoryFormatError(f"need at least 2 frames, found {len(heads)}")
    return ToolTrajectory(dt, np.array(heads), np.array(tails), reference)


def tool_speeds(traj: ToolTrajectory) -> np.ndarray:
    """Reference-point speed per frame (central differences, one-sided at the ends)."""
    p = traj.reference_points()
    v = np.empty_like(p)
    v[1:-1] = (p[2:] - p[:-2]) / (2.0 * traj.dt)
    v[0] = (p[1] - p[0]) / traj.dt
    v[-1] = (p[-1] - p[-2]) / traj.dt
    return np.linalg.norm(v, axis=1)


@dataclass(frozen=True)
class KeypointSet:
    indices: np.ndarray
    kinds: tuple
    positions: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def n_segments(self) -> int:
        return max(1, len(self.indices) - 1)

    def segment_of(self, n_frames: int) -> np.ndarray:
        """Inter-keypoint segment index of every frame.

        Frames before the first keypoint join the first segment and frames
        after the last keypoint join the last one.
        """
        frames = np.arange(n_frames)
        seg = np.searchsorted(self.indices, frames, side="right") - 1
        return np.clip(seg, 0, self.n_segments - 1)


def select_keypoint_frames(speeds) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of top-5% and bottom-5% speed frames before merging.

    The cut-off is the nearest-rank value: the ``ceil(0.05 n)``-th largest
    speed for the high set and the ``ceil(0.05 n)``-th smallest for the low
    set. All ties at the cut-off are included.
    """
    s = np.asarray(speeds, dtype=float)
    rank = max(1, math.ceil(0.05 * len(s)))
    ordered = np.sort(s)
    return s >= ordered[-rank], s <= ordered[rank - 1]


def _runs(mask):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [idx.size - 1]])
    return [idx[a:b + 1] for a, b in zip(starts, ends)]


def _pick(run, speeds, kind, taken):
    values = speeds[run]
    target = values.max() if kind == HIGH else values.min()
    tied = run[values == target]
    if int(tied[0]) not in taken:
        return int(tied[0])
    for frame in tied[::-1]:
        if frame not in taken:
            return int(frame)
    return None


def extract_keypoints(traj: ToolTrajectory) -> KeypointSet:
    """High/low tool-speed keypoints.

    Consecutive selected frames merge into one keypoint at the run's
    extremal-speed frame, earliest on ties. A frame already claimed by the
    other kind is skipped in favour of the latest tied frame, which keeps the
    two sets disjoint.
    """
    if traj.n_frames < 20:
        raise ValueError(f"keypoint extraction needs at least 20 frames, got {traj.n_frames}")
    speeds = tool_speeds(traj)
    high, low = select_keypoint_frames(speeds)
    taken: dict[int, str] = {}
    for kind, mask in ((HIGH, high), (LOW, low)):
        for run in _runs(mask):
            frame = _pick(run, speeds, kind, taken)
            if frame is not None:
                taken[frame] = kind
    order = sorted(taken)
    refs = traj.reference_points()
    return KeypointSet(np.array(order, dtype=int), tuple(taken[i] for i in order), refs[order])


@dataclass(frozen=True)
class AlignmentTransform:
    scale: float = 1.0
    z_offset: float = 0.0
    roll: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}")
        roll = np.atleast_1d(np.asarray(self.roll, dtype=float))
        if np.any(roll < -math.pi) or np.any(roll >= math.pi):
            raise ValueError("roll angles must lie in [-pi, pi)")
        object.__setattr__(self, "roll", roll)


@dataclass(frozen=True)
class PoseSequence:
    """Target tool poses ``p_0 .. p_T`` as stacked arrays."""

    positions: np.ndarray
    rotations: np.ndarray

    def __len__(self) -> int:
        return self.positions.shape[0]

    def quaternions(self) -> np.ndarray:
        return np.array([matrix_to_quat(R) for R in self.rotations])

    def pose(self, t: int):
        from .kinematics import ToolPose
        return ToolPose(self.positions[t].copy(), matrix_to_quat(self.rotations[t]))


def transported_frames(traj: ToolTrajectory) -> np.ndarray:
    """Rotation per frame whose x axis follows the tool direction.

    Frame 0 takes its z axis from world up (projected off the tool axis);
    later frames are carried along by the minimal rotation between
    consecutive tool directions.
    """
    d = traj.directions()
    frames = np.empty((traj.n_frames, 3, 3))
    up = np.array([0.0, 0.0, 1.0])
    z = up - np.dot(up, d[0]) * d[0]
    if np.linalg.norm(z) < 1e-9:
        alt = np.array([1.0, 0.0, 0.0])
        z = alt - np.dot(alt, d[0]) * d[0]
    z /= np.linalg.norm(z)
    frames[0] = np.column_stack([d[0], np.cross(z, d[0]), z])
    for i in range(1, traj.n_frames):
        axis = np.cross(d[i - 1], d[i])
        s = np.linalg.norm(axis)
        c = float(np.clip(np.dot(d[i - 1], d[i]), -1.0, 1.0))
        R = frames[i - 1]
        if s > 1e-15:
            R = axis_angle_matrix(axis / s, math.atan2(s, c)) @ R
        # re-orthonormalise around the exact tool direction
        x = d[i]
        zz = R[:, 2] - np.dot(R[:, 2], x) * x
        zz /= np.linalg.norm(zz)
        frames[i] = np.column_stack([x, np.cross(zz, x), zz])
    return frames


class Aligner:
    """Precomputed reference points and base frames for repeated alignment."""

    def __init__(self, traj: ToolTrajectory, keypoints: KeypointSet):
        self.keypoints = keypoints
        self.refs = traj.reference_points()
        self.base = transported_frames(traj)
        self.segment = keypoints.segment_of(traj.n_frames)

    def __call__(self, transform: AlignmentTransform) -> PoseSequence:
        if len(transform.roll) != self.keypoints.n_segments:
            raise ValueError(f"expected {self.keypoints.n_segments} roll angles, got {len(transform.roll)}")
        refs = self.refs
        pos = refs.copy() if transform.scale == 1.0 else refs[0] + transform.scale * (refs - refs[0])
        pos[:, 2] += transform.z_offset
        rolls = np.stack([rot_x(a) for a in transform.roll])
        rot = np.einsum("nij,njk->nik", self.base, rolls[self.segment])
        return PoseSequence(pos, rot)


def apply_alignment(traj: ToolTrajectory, transform: AlignmentTransform,
                    keypoints: KeypointSet) -> PoseSequence:
    """Scale about frame 0, lift by ``z_offset`` and roll each segment about the tool axis."""
    return Aligner(traj, keypoints)(transform)
