"""Serial kinematic chains: model files, forward kinematics, Jacobians, limit barrier.

A chain is a list of joints, each with a fixed ``origin`` transform from the
previous joint frame followed by a motion along/about its ``axis``. The tool
reference frame hangs off the last joint frame through ``tool_mount``.

Chain-description files are line based::

    # comments start with '#'
    name panda
    joint <name> <revolute|prismatic> axis AX AY AZ xyz TX TY TZ quat W X Y Z limits LO HI vmax VMAX
    ...
    tool_mount xyz TX TY TZ quat W X Y Z

Translations are metres, quaternions ``(w, x, y, z)``, limits rad or m and
``vmax`` rad/s or m/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .geometry import (make_transform, matrix_to_quat, quat_normalize,
                       quat_to_matrix, rot_z)

REVOLUTE = 0
PRISMATIC = 1
_KINDS = {"revolute": REVOLUTE, "prismatic": PRISMATIC}

BUNDLED_MODELS = ("panda", "ur5", "talos_arm11", "planar3")


class ChainFormatError(ValueError):
    """Malformed chain-description file."""


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str
    axis: np.ndarray
    origin: np.ndarray
    lower: float
    upper: float
    velocity_limit: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"joint {self.name}: unknown type {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float)
        n = float(np.linalg.norm(axis))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"joint {self.name}: axis must be unit length, got |axis| = {n}")
        object.__setattr__(self, "axis", axis / n)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        if not self.lower < self.upper:
            raise ValueError(f"joint {self.name}: lower limit must be below upper limit")
        if not self.velocity_limit > 0:
            raise ValueError(f"joint {self.name}: velocity limit must be positive")


@dataclass(frozen=True)
class KinematicChain:
    name: str
    joints: tuple
    tool_mount: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "tool_mount", np.asarray(self.tool_mount, dtype=float))
        if not self.joints:
            raise ValueError("chain needs at least one joint")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @cached_property
    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity_limit for j in self.joints])

    @cached_property
    def packed(self):
        """Arrays consumed by the compiled kernels: origins, axes, kinds, mount."""
        origins = np.ascontiguousarray(np.stack([j.origin for j in self.joints]))
        axes = np.ascontiguousarray(np.stack([j.axis for j in self.joints]))
        kinds = np.array([_KINDS[j.kind] for j in self.joints], dtype=np.int64)
        return origins, axes, kinds, np.ascontiguousarray(self.tool_mount)

    def mid_configuration(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def with_tool_offset(self, offset) -> "KinematicChain":
        """Chain whose tool frame is ``offset`` (4x4) further along the current one."""
        return KinematicChain(self.name, self.joints, self.tool_mount @ np.asarray(offset, dtype=float))


@dataclass(frozen=True)
class BaseMount:
    """Ground-plane placement of the robot base at a fixed height."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        wrapped = (float(self.yaw) + math.pi) % (2.0 * math.pi) - math.pi
        object.__setattr__(self, "yaw", wrapped)

    def transform(self) -> np.ndarray:
        return make_transform(rot_z(self.yaw), [self.x, self.y, self.z])


@dataclass(frozen=True)
class ToolPose:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("tool orientation must be a unit quaternion")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_transform(cls, T) -> "ToolPose":
        return cls(T[:3, 3].copy(), matrix_to_quat(T[:3, :3]))

    def transform(self) -> np.ndarray:
        return make_transform(quat_to_matrix(self.orientation), self.position)


# -- chain files -------------------------------------------------------------

def _floats(tokens, i, n, lineno, what):
    try:
        vals = [float(t) for t in tokens[i:i + n]]
    except ValueError as exc:
        raise ChainFormatError(f"line {lineno}: bad number in {what}: {exc}") from None
    if len(vals) != n:
        raise ChainFormatError(f"line {lineno}: {what} needs {n} values")
    if not all(math.isfinite(v) for v in vals):
        raise ChainFormatError(f"line {lineno}: non-finite value in {what}")
    return vals


def _parse_pose(tokens, lineno):
    fields = {}
    i = 0
    sizes = {"xyz": 3, "quat": 4, "axis": 3, "limits": 2, "vmax": 1}
    while i < len(tokens):
        key = tokens[i]
        if key not in sizes:
            raise ChainFormatError(f"line {lineno}: unknown field {key!r}")
        fields[key] = _floats(tokens, i + 1, sizes[key], lineno, key)
        i += 1 + sizes[key]
    return fields


def _origin(fields, lineno):
    for key in ("xyz", "quat"):
        if key not in fields:
            raise ChainFormatError(f"line {lineno}: missing {key}")
    q = np.array(fields["quat"])
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise ChainFormatError(f"line {lineno}: quat is not unit length")
    return make_transform(quat_to_matrix(quat_normalize(q)), fields["xyz"])


def parse_chain(text: str) -> KinematicChain:
    name = "chain"
    joints = []
    mount = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "name":
            name = " ".join(tokens[1:])
        elif head == "joint":
            if len(tokens) < 3:
                raise ChainFormatError(f"line {lineno}: joint record needs a name and a type")
            fields = _parse_pose(tokens[3:], lineno)
            for key in ("axis", "limits", "vmax"):
                if key not in fields:
                    raise ChainFormatError(f"line {lineno}: missing {key}")
            origin = _origin(fields, lineno)
            try:
                joints.append(Joint(tokens[1], tokens[2], np.array(fields["axis"]),
                                    origin, fields["limits"][0],
                                    fields["limits"][1], fields["vmax"][0]))
            except ValueError as exc:
                raise ChainFormatError(f"line {lineno}: {exc}") from None
        elif head == "tool_mount":
            mount = _origin(_parse_pose(tokens[1:], lineno), lineno)
        else:
            raise ChainFormatError(f"line {lineno}: unknown record {head!r}")
    if not joints:
        raise ChainFormatError("no joint records")
    return KinematicChain(name, tuple(joints), np.eye(4) if mount is None else mount)


def _pose_tokens(T) -> str:
    q = matrix_to_quat(T[:3, :3])
    return "xyz {} quat {}".format(" ".join(repr(float(v)) for v in T[:3, 3]),
                                   " ".join(repr(float(v)) for v in q))


def dump_chain(chain: KinematicChain) -> str:
    lines = ["# toolimit chain description", f"name {chain.name}"]
    for j in chain.joints:
        lines.append(
            f"joint {j.name} {j.kind} axis {' '.join(repr(float(a)) for a in j.axis)} "
            f"{_pose_tokens(j.origin)} limits {j.lower!r} {j.upper!r} vmax {j.velocity_limit!r}")
    lines.append(f"tool_mount {_pose_tokens(chain.tool_mount)}")
    return "\n".join(lines) + "\n"


def load_chain(path) -> KinematicChain:
    """Load a chain file, or a bundled model by name (``panda``, ``ur5``, ...)."""
    path = str(path)
    if path in BUNDLED_MODELS:
        text = resources.files("toolimit.models").joinpath(f"{path}.chain").read_text()
        return parse_chain(text)
    return parse_chain(Path(path).read_text())


# -- compiled kernels --------------------------------------------------------

@njit(cache=True)
def _matmul4(A, B, out):
    for i in range(4):
        for j in range(4):
            s = 0.0
            for k in range(4):
                s += A[i, k] * B[k, j]
            out[i, j] = s


@njit(cache=True)
def _joint_motion(kind, axis, q, M):
    for i in range(4):
        for j in range(4):
            M[i, j] = 1.0 if i == j else 0.0
    if kind == 0:
        c = math.cos(q)
        s = math.sin(q)
        x, y, z = axis[0], axis[1], axis[2]
        C = 1.0 - c
        M[0, 0] = c + x * x * C
        M[0, 1] = x * y * C - z * s
        M[0, 2] = x * z * C + y * s
        M[1, 0] = y * x * C + z * s
        M[1, 1] = c + y * y * C
        M[1, 2] = y * z * C - x * s
        M[2, 0] = z * x * C - y * s
        M[2, 1] = z * y * C + x * s
        M[2, 2] = c + z * z * C
    else:
        M[0, 3] = axis[0] * q
        M[1, 3] = axis[1] * q
        M[2, 3] = axis[2] * q


@njit(cache=True)
def fk_kernel(origins, axes, kinds, mount, base, q, out):
    """Tool transform into ``out`` (4x4)."""
    T = base.copy()
    tmp = np.empty((4, 4))
    M = np.empty((4, 4))
    for i in range(q.shape[0]):
        _matmul4(T, origins[i], tmp)
        _joint_motion(kinds[i], axes[i], q[i], M)
        _matmul4(tmp, M, T)
    _matmul4(T, mount, out)


@njit(cache=True)
def fk_jac_kernel(origins, axes, kinds, mount, base, q, T_out, J_out):
    """Tool transform and 6xN world-frame Jacobian (linear rows first)."""
    n = q.shape[0]
    T = base.copy()
    tmp = np.empty((4, 4))
    M = np.empty((4, 4))
    zs = np.empty((n, 3))
    ps = np.empty((n, 3))
    for i in range(n):
        _matmul4(T, origins[i], tmp)
        for r in range(3):
            zs[i, r] = tmp[r, 0] * axes[i, 0] + tmp[r, 1] * axes[i, 1] + tmp[r, 2] * axes[i, 2]
            ps[i, r] = tmp[r, 3]
        _joint_motion(kinds[i], axes[i], q[i], M)
        _matmul4(tmp, M, T)
    _matmul4(T, mount, T_out)
    px, py, pz = T_out[0, 3], T_out[1, 3], T_out[2, 3]
    for i in range(n):
        zx, zy, zz = zs[i, 0], zs[i, 1], zs[i, 2]
        if kinds[i] == 0:
            dx, dy, dz = px - ps[i, 0], py - ps[i, 1], pz - ps[i, 2]
            J_out[0, i] = zy * dz - zz * dy
            J_out[1, i] = zz * dx - zx * dz
            J_out[2, i] = zx * dy - zy * dx
            J_out[3, i] = zx
            J_out[4, i] = zy
            J_out[5, i] = zz
        else:
            J_out[0, i] = zx
            J_out[1, i] = zy
            J_out[2, i] = zz
            J_out[3, i] = 0.0
            J_out[4, i] = 0.0
            J_out[5, i] = 0.0


# -- public operations -------------------------------------------------------

def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint values, got shape {q.shape}")
    return q


def tool_transform(chain: KinematicChain, base: BaseMount, q) -> np.ndarray:
    q = _check_q(chain, q)
    out = np.empty((4, 4))
    fk_kernel(*chain.packed, base.transform(), q, out)
    return out


def forward_kinematics(chain: KinematicChain, base: BaseMount, q) -> ToolPose:
    """World pose of the tool reference frame."""
    return ToolPose.from_transform(tool_transform(chain, base, q))


def tool_jacobian(chain: KinematicChain, base: BaseMount, q) -> np.ndarray:
    """6xN Jacobian: column i is the tool twist (linear; angular) per unit joint-i velocity."""
    q = _check_q(chain, q)
    T = np.empty((4, 4))
    J = np.empty((6, chain.dof))
    fk_jac_kernel(*chain.packed, base.transform(), q, T, J)
    return J


def joint_limit_barrier(chain: KinematicChain, q):
    """Quadratic hinge on joint limits.

    Returns:
        (value, gradient, diagonal of the Hessian).
    """
    q = _check_q(chain, q)
    over = np.maximum(0.0, q - chain.upper)
    under = np.maximum(0.0, chain.lower - q)
    value = float(np.sum(over ** 2) + np.sum(under ** 2))
    grad = 2.0 * over - 2.0 * under
    hess = 2.0 * ((q > chain.upper) | (q < chain.lower)).astype(float)
    return value, grad, hess
