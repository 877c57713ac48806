"""Performance-gated widening of randomized object-position ranges.

Every randomized parameter is a named offset such as ``"goal.x"``: a
uniform draw from ``[lo, hi]`` added to that coordinate of the object at
reset. All parameters share one success window; a full window with mean at
or above ``tau_hi`` widens every range by ``delta`` on both sides (clamped to
the target), a mean at or below ``tau_lo`` narrows it (clamped to the
initial range). The window is cleared after any change.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class AdrState:
    ranges: dict
    initial: dict
    target: dict
    delta: float = 0.02
    window: int = 10
    tau_hi: float = 0.8
    tau_lo: float = 0.2
    history: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must hold at least one episode")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0.0 <= self.tau_lo < self.tau_hi <= 1.0:
            raise ValueError("thresholds must satisfy 0 <= tau_lo < tau_hi <= 1")
        for name in self.ranges:
            (lo, hi), (ilo, ihi), (tlo, thi) = self.ranges[name], self.initial[name], self.target[name]
            if not (tlo <= ilo <= ihi <= thi):
                raise ValueError(f"{name}: initial range must lie inside the target range")
            if not (tlo - 1e-12 <= lo <= ilo + 1e-12 and ihi - 1e-12 <= hi <= thi + 1e-12):
                raise ValueError(f"{name}: range must lie between the initial and target ranges")
            _split(name)

    @classmethod
    def create(cls, target: dict, initial: dict | None = None, **kw) -> "AdrState":
        """Start every range at ``initial`` (default: the single point 0)."""
        initial = initial or {k: (0.0, 0.0) for k in target}
        ranges = {k: tuple(map(float, initial[k])) for k in target}
        return cls(ranges, {k: tuple(map(float, v)) for k, v in initial.items()},
                   {k: tuple(map(float, v)) for k, v in target.items()}, **kw)

    def widths(self) -> dict:
        return {k: hi - lo for k, (lo, hi) in self.ranges.items()}

    def at_target(self) -> bool:
        return all(abs(self.ranges[k][0] - self.target[k][0]) < 1e-12
                   and abs(self.ranges[k][1] - self.target[k][1]) < 1e-12 for k in self.ranges)

    def objects(self) -> tuple:
        return tuple(dict.fromkeys(_split(k)[0] for k in self.ranges))

    def sample_offsets(self, rng, ranges: dict | None = None) -> dict:
        """Per-object 3-vector offsets drawn uniformly from the current (or given) ranges."""
        ranges = self.ranges if ranges is None else ranges
        out = {}
        for name in sorted(ranges):
            obj, axis = _split(name)
            lo, hi = ranges[name]
            out.setdefault(obj, np.zeros(3))[axis] = rng.uniform(lo, hi) if hi > lo else lo
        return out


def _split(name: str):
    obj, _, axis = name.rpartition(".")
    if not obj or axis not in AXES:
        raise ValueError(f"randomized parameter {name!r} must look like '<object>.<x|y|z>'")
    return obj, AXES[axis]


def adr_update(adr: AdrState, episode_success: bool) -> AdrState:
    history = adr.history + (bool(episode_success),)
    if len(history) < adr.window:
        return replace(adr, history=history)
    rate = float(np.mean(history[-adr.window:]))
    if rate >= adr.tau_hi:
        sign = 1.0
    elif rate <= adr.tau_lo:
        sign = -1.0
    else:
        return replace(adr, history=history[-adr.window:])
    ranges = {}
    for k, (lo, hi) in adr.ranges.items():
        (ilo, ihi), (tlo, thi) = adr.initial[k], adr.target[k]
        nlo = min(max(lo - sign * adr.delta, tlo), ilo)
        nhi = max(min(hi + sign * adr.delta, thi), ihi)
        ranges[k] = (nlo, nhi)
    return replace(adr, ranges=ranges, history=())
