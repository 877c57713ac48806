"""Scene alignment: sample scene parameters around keypoints and keep those that score.

Candidate files are JSON::

    {"format": "toolimit-candidates/1", "draws": 20000, "flagged": 3,
     "candidates": [{"index": 812, "mean_reward": 4.2, "n_rollouts": 10,
                     "params": {...SceneParams.to_dict()...}}, ...]}
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envsim.core import EnvConfig
from .envsim.tasks import SceneError, make_env
from .scene import ParamBounds, SceneParams
from .trajectory import SCALES, AlignmentTransform, Aligner, KeypointSet, ToolTrajectory, extract_keypoints

REQUIRED_OBJECTS = {"spade": ("deposit", "goal"), "hammer": ("nail",), "scythe": ("grass",)}
CANDIDATE_FORMAT = "toolimit-candidates/1"


class SamplingError(RuntimeError):
    """Rejection sampling ran out of attempts."""


def min_object_distance(traj_or_points) -> float:
    """``0.1 * (d_max - d_min)`` over all pairs of distinct reference points."""
    if isinstance(traj_or_points, ToolTrajectory):
        pts = traj_or_points.reference_points()
    else:
        pts = np.asarray(traj_or_points, dtype=float)
    pts = np.unique(pts, axis=0)
    if pts.shape[0] < 2:
        raise ValueError("degenerate trajectory: all reference points coincide")
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(pts.shape[0], k=1)
    pair = d[iu]
    return 0.1 * (float(pair.max()) - float(pair.min()))


@dataclass(frozen=True)
class PlacementDistribution:
    means: np.ndarray
    cov: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if means.shape[0] < 1 or means.shape[1] != 3:
            raise ValueError("means must have shape (m, 3) with m >= 1")
        if cov.shape != (3, 3) or not np.allclose(cov, cov.T, rtol=0, atol=1e-15):
            raise ValueError("covariance must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be positive definite")
        if w.shape != (means.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative, one per mean, and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))

    @classmethod
    def from_keypoints(cls, keypoints: KeypointSet, sigma: float = 0.2, weights=None):
        m = len(keypoints)
        w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=float)
        return cls(keypoints.positions, sigma ** 2 * np.eye(3), w)

    def sample(self, rng: np.random.Generator, size: int):
        """Component indices and points for ``size`` i.i.d. draws."""
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        z = rng.standard_normal((size, 3))
        return comp, self.means[comp] + z @ self._chol.T


def sample_scene(dist: PlacementDistribution, bounds: ParamBounds, d_th: float, rng_seed,
                 objects=("deposit", "goal"), n_segments: int = 1, z_std: float = 0.5,
                 max_attempts: int = 1000) -> SceneParams:
    """Draw one scene.

    Object positions come from the mixture and are redrawn jointly until every
    pair is at least ``d_th`` apart. Then one roll per segment ~ U[-pi, pi),
    ``z_offset ~ N(0, z_std^2)``, scale uniform over the allowed set, yaws and
    auxiliary values uniform in their bounds.
    """
    rng = np.random.default_rng(rng_seed)
    objects = tuple(objects)
    for _ in range(max_attempts):
        _, pts = dist.sample(rng, len(objects))
        if len(objects) < 2:
            break
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.sqrt(np.sum(diff * diff, axis=-1))[np.triu_indices(len(objects), k=1)]
        if np.all(d >= d_th):
            break
    else:
        raise SamplingError(f"no placement with pairwise distance >= {d_th:.4g} m in {max_attempts} attempts")
    roll = rng.uniform(-math.pi, math.pi, size=n_segments)
    roll[roll >= math.pi] = -math.pi
    z_offset = float(rng.normal(0.0, z_std))
    scale = SCALES[int(rng.integers(len(SCALES)))]
    yaws = {}
    for name in bounds.yaw_objects():
        a, b = bounds.bounds["yaw." + name]
        yaws[name] = float(rng.uniform(a, b))
    aux = {}
    for name in bounds.aux_names():
        a, b = bounds.bounds[name]
        aux[name] = float(rng.uniform(a, b))
    return SceneParams(dict(zip(objects, pts)), yaws, AlignmentTransform(scale, z_offset, roll), aux)


def sim_seed(master: int, index: int, repeat: int) -> int:
    return int(np.random.SeedSequence([master, index, repeat]).generate_state(1)[0])


def score_candidate(env_config: EnvConfig, params: SceneParams, poses, repeats: int = 10,
                    seeds=None) -> tuple[float, str | None]:
    """Mean goal reward over ``repeats`` kinematic replays, and a flag when scored 0 by fault."""
    seeds = list(range(repeats)) if seeds is None else list(seeds)
    try:
        env = make_env(env_config, params)
    except SceneError as exc:
        return 0.0, f"invalid scene: {exc}"
    total = 0.0
    for s in seeds:
        try:
            r = env.goal_return(poses, seed=s)
        except FloatingPointError as exc:
            return 0.0, f"diverged: {exc}"
        if not math.isfinite(r):
            return 0.0, "diverged: non-finite reward"
        total += r
    return total / len(seeds), None


def evaluate_candidate(env_config: EnvConfig, params: SceneParams, poses, repeats: int = 10,
                       seed: int = 0) -> float:
    """Mean goal reward of replaying ``poses`` with the tool alone, over distinct sim seeds."""
    return score_candidate(env_config, params, poses, repeats,
                           [sim_seed(seed, 0, r) for r in range(repeats)])[0]


@dataclass
class Candidate:
    params: SceneParams
    mean_reward: float
    n_rollouts: int
    index: int = -1


@dataclass
class CandidateSet:
    candidates: list = field(default_factory=list)
    draws: int = 0
    flagged: int = 0
    sampling_failures: int = 0

    def __len__(self) -> int:
        return len(self.candidates)

    def best(self) -> Candidate:
        return self.candidates[0]

    def to_json(self) -> str:
        doc = {
            "format": CANDIDATE_FORMAT,
            "draws": self.draws,
            "flagged": self.flagged,
            "sampling_failures": self.sampling_failures,
            "candidates": [{"index": c.index, "mean_reward": c.mean_reward, "n_rollouts": c.n_rollouts,
                            "params": c.params.to_dict()} for c in self.candidates],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CandidateSet":
        doc = json.loads(text)
        if doc.get("format") != CANDIDATE_FORMAT:
            raise ValueError("not a candidate file")
        cands = [Candidate(SceneParams.from_dict(c["params"]), float(c["mean_reward"]),
                           int(c["n_rollouts"]), int(c["index"])) for c in doc["candidates"]]
        return cls(cands, int(doc["draws"]), int(doc["flagged"]), int(doc.get("sampling_failures", 0)))


def save_candidates(cs: CandidateSet, path) -> None:
    Path(path).write_text(cs.to_json())


def load_candidates(path) -> CandidateSet:
    return CandidateSet.from_json(Path(path).read_text())


@dataclass
class AlignSettings:
    budget: int = 20000
    K: int = 100
    sigma: float = 0.2
    weights: tuple | None = None
    z_std: float = 0.5
    repeats: int = 10
    max_attempts: int = 1000
    chunk: int = 256
    workers: int = 1


class _Job:
    """Everything needed to score a range of sample indices, picklable for worker processes."""

    def __init__(self, traj, env_config, bounds, settings, seed):
        self.traj = traj
        self.env_config = env_config
        self.bounds = bounds
        self.settings = settings
        self.seed = seed
        self.keypoints = extract_keypoints(traj)
        self.dist = PlacementDistribution.from_keypoints(self.keypoints, settings.sigma, settings.weights)
        self.d_th = min_object_distance(traj)
        self.objects = REQUIRED_OBJECTS[env_config.kind]
        self._aligner = None

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_aligner"] = None
        return d

    def run(self, indices):
        if self._aligner is None:
            self._aligner = Aligner(self.traj, self.keypoints)
        s = self.settings
        out = []
        for i in indices:
            try:
                params = sample_scene(self.dist, self.bounds, self.d_th, [self.seed, i], self.objects,
                                      self.keypoints.n_segments, s.z_std, s.max_attempts)
            except SamplingError:
                out.append((i, None, 0.0, "sampling"))
                continue
            poses = self._aligner(params.transform)
            seeds = [sim_seed(self.seed, i, r) for r in range(s.repeats)]
            mean, flag = score_candidate(self.env_config, params, poses, s.repeats, seeds)
            out.append((i, params, mean, flag))
        return out


def _run_job(job, indices):
    return job.run(indices)


def align(traj: ToolTrajectory, env_config: EnvConfig, bounds: ParamBounds | None = None,
          settings: AlignSettings | None = None, seed: int = 0, progress=None) -> CandidateSet:
    """Draw up to ``budget`` scenes in index order and keep the first ``K`` that score above zero.

    Sample ``i`` uses the seed ``[seed, i]`` no matter which worker runs it,
    and candidates are taken in index order, so results do not depend on the
    number of workers. The kept candidates are returned best first, ties by
    index.
    """
    settings = settings or AlignSettings()
    bounds = bounds or ParamBounds()
    if settings.K < 1:
        raise ValueError("K must be >= 1")
    job = _Job(traj, env_config, bounds, settings, seed)
    result = CandidateSet()
    found = []
    chunks = [range(a, min(a + settings.chunk, settings.budget))
              for a in range(0, settings.budget, settings.chunk)]

    def consume(rows):
        for i, params, mean, flag in rows:
            if len(found) >= settings.K:
                return True
            result.draws = i + 1
            if flag == "sampling":
                result.sampling_failures += 1
            elif flag is not None:
                result.flagged += 1
            elif mean > 0.0:
                found.append(Candidate(params, mean, settings.repeats, i))
        return len(found) >= settings.K

    if settings.workers <= 1:
        for ch in chunks:
            if consume(job.run(ch)):
                break
            if progress:
                progress(result.draws, len(found))
    else:
        with ProcessPoolExecutor(settings.workers) as pool:
            for start in range(0, len(chunks), settings.workers):
                batch = chunks[start:start + settings.workers]
                done = False
                for rows in pool.map(_run_job, [job] * len(batch), batch):
                    if consume(rows):
                        done = True
                        break
                if progress:
                    progress(result.draws, len(found))
                if done:
                    break
    found.sort(key=lambda c: (-c.mean_reward, c.index))
    result.candidates = found
    return result
