"""Run configuration read from an INI file.

Sections mirror the modules; every key is optional and falls back to the
dataclass default::

    [run]        kind, robot, trajectory, trajectory_reference, seed, out
    [env]        any EnvConfig field (tuples as space- or comma-separated numbers)
    [alignment]  any AlignSettings field (weights: one number per keypoint)
    [bounds]     <name> = lo hi         (e.g. yaw.goal = -0.5 0.5)
    [trajopt]    TrackingWeights fields, region_x/region_y/region_yaw = lo hi, region_z,
                 BaseSearch fields, q0 = mid | ik, max_candidates, demo_seed
    [learn]      LearnSettings fields
    [ppo]        any PPOConfig field
    [adr]        enabled, <object>.<axis> = lo hi (target range), delta, window, tau_hi, tau_lo, obs_std

Relative paths are resolved against the directory of the config file.
``robot`` is a bundled model name (panda, ur5, talos_arm11, planar3) or a
path to a chain file.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import AlignSettings
from .envsim.core import EnvConfig
from .kinematics import BUNDLED_MODELS
from .policylearn.training import PPOConfig
from .scene import ParamBounds
from .trajopt import BaseRegion, BaseSearch, TrackingWeights


class ConfigError(ValueError):
    pass


@dataclass
class TrajoptSettings:
    weights: TrackingWeights = field(default_factory=TrackingWeights)
    region: BaseRegion = field(default_factory=BaseRegion)
    search: BaseSearch = field(default_factory=BaseSearch)
    q0: str = "ik"
    max_candidates: int = 5
    demo_seed: int = 0


@dataclass
class LearnSettings:
    demo_episodes: int = 48
    demo_noise: float = 0.1
    demo_gain: float = 4.0
    bc_epochs: int = 300
    bc_lr: float = 1e-3
    bc_momentum: float = 0.9
    bc_batch: int = 64
    log_std: float = math.log(0.1)
    velocity_coef: float = 1.0
    eval_episodes: int = 10


@dataclass
class AdrSettings:
    enabled: bool = False
    target: dict = field(default_factory=dict)
    delta: float = 0.03
    window: int = 8
    tau_hi: float = 0.8
    tau_lo: float = 0.2
    obs_std: float = 0.1


@dataclass
class RunConfig:
    kind: str = "spade"
    robot: str = "panda"
    trajectory: str = ""
    trajectory_reference: str = "midpoint"
    seed: int = 0
    out: str = "runs/default"
    env: EnvConfig = field(default_factory=EnvConfig)
    alignment: AlignSettings = field(default_factory=AlignSettings)
    bounds: ParamBounds = field(default_factory=ParamBounds)
    trajopt: TrajoptSettings = field(default_factory=TrajoptSettings)
    learn: LearnSettings = field(default_factory=LearnSettings)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    adr: AdrSettings = field(default_factory=AdrSettings)
    source: str = ""

    def validate(self) -> None:
        if self.env.kind != self.kind:
            raise ConfigError(f"[env] kind {self.env.kind!r} does not match [run] kind {self.kind!r}")
        if self.trajectory and not Path(self.trajectory).is_file():
            raise ConfigError(f"trajectory file not found: {self.trajectory}")
        if self.robot not in BUNDLED_MODELS and not Path(self.robot).is_file():
            raise ConfigError(f"robot model not found: {self.robot}")

    def to_dict(self) -> dict:
        d = _plain(dataclasses.asdict(self))
        d.pop("source", None)
        return d

    def digest(self) -> str:
        # the output directory does not affect results
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _numbers(text: str):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[value.strip().lower()]
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            vals = _numbers(value)
            if default and all(isinstance(v, int) for v in default):
                if any(v != int(v) for v in vals):
                    raise ValueError
                return tuple(int(v) for v in vals)
            return vals
        if default is None:
            return _numbers(value) if value.strip().lower() != "none" else None
        return value.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {value!r}") from None


def _apply(obj, items: dict, section: str, skip=()):
    names = {f.name for f in dataclasses.fields(obj)}
    for key, raw in items.items():
        if key in skip:
            continue
        if key not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        setattr(obj, key, _coerce(raw, getattr(obj, key), f"{section}.{key}"))
    if hasattr(obj, "__post_init__"):
        try:
            obj.__post_init__()
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None


def _pair(text, key):
    vals = _numbers(text)
    if len(vals) != 2:
        raise ConfigError(f"{key!r} needs two numbers, got {text!r}")
    return vals


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(path)
    known = {"run", "env", "alignment", "bounds", "trajopt", "learn", "ppo", "adr"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
    cfg = RunConfig()
    sec = lambda name: dict(cp[name]) if cp.has_section(name) else {}
    _apply(cfg, sec("run"), "run", skip=())
    base = path.parent
    if cfg.trajectory:
        cfg.trajectory = str((base / cfg.trajectory).resolve())
    if cfg.robot not in BUNDLED_MODELS:
        cfg.robot = str((base / cfg.robot).resolve())
    cfg.out = str((base / cfg.out).resolve())
    env_items = sec("env")
    env_items.setdefault("kind", cfg.kind)
    cfg.env = EnvConfig(kind=env_items["kind"])
    _apply(cfg.env, env_items, "env")
    al = sec("alignment")
    cfg.alignment = AlignSettings()
    _apply(cfg.alignment, al, "alignment")
    cfg.bounds = ParamBounds({k: _pair(v, k) for k, v in sec("bounds").items()})
    t = sec("trajopt")
    to = TrajoptSettings()
    region = {}
    for key in list(t):
        if key.startswith("region_"):
            axis = key[len("region_"):]
            region[axis] = float(t.pop(key)) if axis == "z" else _pair(t.pop(key), key)
    try:
        to.region = BaseRegion(**region)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[trajopt] region: {exc}") from None
    for target, names in ((to.weights, ("w_v", "w_b", "w_R")),
                          (to.search, tuple(f.name for f in dataclasses.fields(BaseSearch)))):
        _apply(target, {k: t.pop(k) for k in names if k in t}, "trajopt")
    _apply(to, t, "trajopt")
    if to.q0 not in ("mid", "ik"):
        raise ConfigError("[trajopt] q0 must be 'mid' or 'ik'")
    cfg.trajopt = to
    cfg.learn = LearnSettings()
    _apply(cfg.learn, sec("learn"), "learn")
    cfg.ppo = PPOConfig()
    _apply(cfg.ppo, sec("ppo"), "ppo")
    a = sec("adr")
    adr = AdrSettings()
    plain = {k: a.pop(k) for k in list(a) if "." not in k}
    _apply(adr, plain, "adr")
    adr.target = {k: _pair(v, k) for k, v in a.items()}
    cfg.adr = adr
    cfg.source = str(path.resolve())
    cfg.validate()
    return cfg
