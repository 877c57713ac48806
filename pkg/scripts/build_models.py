"""Regenerate the bundled chain-description files from DH tables.

Panda uses the manufacturer's modified-DH table, UR5 the standard-DH table.
The Talos torso + right arm chain is an approximation (fixed lower body,
2 torso joints, 9 arm/hand joints) with link lengths rounded from the
public model; it is not meant to reproduce the real robot's workspace exactly.

    python scripts/build_models.py
"""

import math
from pathlib import Path

import numpy as np

from toolimit.geometry import make_transform, rot_x
from toolimit.kinematics import Joint, KinematicChain, dump_chain

OUT = Path(__file__).resolve().parents[1] / "src" / "toolimit" / "models"

Z = np.array([0.0, 0.0, 1.0])
Y = np.array([0.0, 1.0, 0.0])
X = np.array([1.0, 0.0, 0.0])


def rot_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def modified_dh(a, d, alpha):
    return make_transform(rot_x(alpha), [a, -d * math.sin(alpha), d * math.cos(alpha)])


def standard_dh_tail(a, d, alpha):
    return make_transform(rot_x(alpha), [a, 0.0, d])


def panda():
    table = [(0.0, 0.333, 0.0), (0.0, 0.0, -math.pi / 2), (0.0, 0.316, math.pi / 2),
             (0.0825, 0.0, math.pi / 2), (-0.0825, 0.384, -math.pi / 2),
             (0.0, 0.0, math.pi / 2), (0.088, 0.0, math.pi / 2)]
    limits = [(-2.8973, 2.8973), (-1.7628, 1.7628), (-2.8973, 2.8973), (-3.0718, -0.0698),
              (-2.8973, 2.8973), (-0.0175, 3.7525), (-2.8973, 2.8973)]
    vmax = [2.175, 2.175, 2.175, 2.175, 2.61, 2.61, 2.61]
    joints = [Joint(f"panda_joint{i + 1}", "revolute", Z, modified_dh(*table[i]), *limits[i], vmax[i])
              for i in range(7)]
    # flange (0.107) + gripper (0.10); tool long axis along the flange z axis
    mount = make_transform(rot_y(-math.pi / 2), [0.0, 0.0, 0.207])
    return KinematicChain("panda", joints, mount)


def ur5():
    d = [0.089159, 0.0, 0.0, 0.10915, 0.09465, 0.0823]
    a = [0.0, -0.425, -0.39225, 0.0, 0.0, 0.0]
    alpha = [math.pi / 2, 0.0, 0.0, math.pi / 2, -math.pi / 2, 0.0]
    joints = []
    prev = np.eye(4)
    for i in range(6):
        joints.append(Joint(f"ur5_joint{i + 1}", "revolute", Z, prev, -2 * math.pi, 2 * math.pi, 3.15))
        prev = standard_dh_tail(a[i], d[i], alpha[i])
    mount = prev @ make_transform(rot_y(-math.pi / 2), [0.0, 0.0, 0.10])
    return KinematicChain("ur5", joints, mount)


def talos_arm11():
    table = [
        ("torso_1", Z, [0.0, 0.0, 1.05], (-1.3, 1.3), 5.4),
        ("torso_2", Y, [0.0, 0.0, 0.0], (-0.2, 0.8), 5.4),
        ("arm_right_1", Z, [0.0, -0.157, 0.232], (-1.57, 0.79), 2.7),
        ("arm_right_2", X, [0.0, 0.0, 0.0], (-2.88, 0.0), 3.66),
        ("arm_right_3", Z, [0.0, -0.02, -0.23], (-2.44, 2.44), 4.58),
        ("arm_right_4", Y, [0.02, 0.0, -0.27], (-2.23, 0.0), 4.58),
        ("arm_right_5", Z, [-0.02, 0.0, -0.26], (-2.51, 2.51), 1.95),
        ("arm_right_6", Y, [0.0, 0.0, 0.0], (-1.37, 1.37), 1.76),
        ("arm_right_7", X, [0.0, 0.0, 0.0], (-0.68, 0.68), 1.76),
        ("hand_right_pitch", Y, [0.0, 0.0, -0.08], (-1.0, 1.0), 2.0),
        ("hand_right_roll", Z, [0.0, 0.0, -0.05], (-2.5, 2.5), 2.0),
    ]
    joints = [Joint(n, "revolute", ax, make_transform(p=o), lo, hi, v) for n, ax, o, (lo, hi), v in table]
    mount = make_transform(rot_y(math.pi / 2), [0.0, 0.0, -0.08])
    return KinematicChain("talos_arm11", joints, mount)


def planar3():
    lengths = [0.5, 0.4, 0.3]
    joints = []
    offset = 0.0
    for i, length in enumerate(lengths):
        joints.append(Joint(f"j{i + 1}", "revolute", Z, make_transform(p=[offset, 0.0, 0.0]),
                            -math.pi, math.pi, 3.0))
        offset = length
    return KinematicChain("planar3", joints, make_transform(p=[offset, 0.0, 0.0]))


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (panda, ur5, talos_arm11, planar3):
        chain = build()
        (OUT / f"{chain.name}.chain").write_text(dump_chain(chain))
        print(f"wrote {chain.name}: {chain.dof} dof")
