"""Scene parameter containers shared by alignment, simulation and the pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trajectory import AlignmentTransform


@dataclass(frozen=True)
class ParamBounds:
    """Named ``[a, b]`` bounds; ``yaw.<object>`` entries bound object yaws."""

    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, (a, b) in self.bounds.items():
            if not a < b:
                raise ValueError(f"bounds for {name!r} must satisfy a < b")

    def aux_names(self):
        return sorted(n for n in self.bounds if not n.startswith("yaw."))

    def yaw_objects(self):
        return sorted(n[4:] for n in self.bounds if n.startswith("yaw."))


@dataclass
class SceneParams:
    object_positions: dict
    object_yaws: dict = field(default_factory=dict)
    transform: AlignmentTransform = field(default_factory=AlignmentTransform)
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.object_positions = {k: np.asarray(v, dtype=float) for k, v in self.object_positions.items()}
        self.object_yaws = {k: float(v) for k, v in self.object_yaws.items()}
        self.aux = {k: float(v) for k, v in self.aux.items()}

    def min_pairwise_distance(self) -> float:
        pts = list(self.object_positions.values())
        best = math.inf
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                best = min(best, float(np.linalg.norm(pts[i] - pts[j])))
        return best

    def to_dict(self) -> dict:
        return {
            "object_positions": {k: [float(x) for x in v] for k, v in sorted(self.object_positions.items())},
            "object_yaws": {k: float(v) for k, v in sorted(self.object_yaws.items())},
            "transform": {
                "scale": float(self.transform.scale),
                "z_offset": float(self.transform.z_offset),
                "roll": [float(a) for a in self.transform.roll],
            },
            "aux": {k: float(v) for k, v in sorted(self.aux.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneParams":
        t = d.get("transform", {})
        transform = AlignmentTransform(t.get("scale", 1.0), t.get("z_offset", 0.0),
                                       np.array(t.get("roll", [0.0])))
        return cls(d["object_positions"], d.get("object_yaws", {}), transform, d.get("aux", {}))

    def with_offsets(self, offsets: dict) -> "SceneParams":
        """Copy with ``offsets[name]`` (3-vector) added to object positions."""
        pos = {k: v + np.asarray(offsets.get(k, np.zeros(3)), dtype=float)
               for k, v in self.object_positions.items()}
        return SceneParams(pos, dict(self.object_yaws), self.transform, dict(self.aux))
