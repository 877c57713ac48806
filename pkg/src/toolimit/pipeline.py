"""Pipeline stages wired to files in the run directory.

Artifacts written to ``out``:

    candidates.json     alignment result (see toolimit.alignment)
    selection.csv       per-candidate base, tracking cost and robot-executed reward
    scene.json          SceneParams of the selected candidate
    solution.txt        tracking solution (see toolimit.trajopt)
    demo_pairs.csv      t, s_0..s_{M-1}, a_0..a_{N-1} from the noise-free demo rollout
    policy.tlp          policy checkpoint (see toolimit.policylearn.checkpoint)
    value.tlp           value checkpoint
    bc_loss.csv         epoch, mse
    curve.csv           PPO curve
    metrics.json        deterministic evaluation
    baseline_<kind>_*   the same files for PPO from scratch
    manifest.json       sha256 of every artifact per stage plus config digest
    timings.json        wall time per stage (kept out of the manifest so it stays reproducible)
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import CandidateSet, align, load_candidates, save_candidates
from .config import RunConfig
from .envsim import RobotEnv, SceneError
from .kinematics import load_chain
from .policylearn import (AdrState, GaussianPolicy, PPOConfig, TrainingAborted, bc_train, episode_success,
                          evaluate_policy, load_checkpoint, perturbed_demo_pairs, ppo_finetune, save_checkpoint,
                          write_curve)
from .scene import SceneParams
from .trajectory import Aligner, extract_keypoints, load_trajectory
from .trajopt import (SolverError, TrackingProblem, load_solution, rollout_demo, save_solution,
                      solve_with_base)

MANIFEST_FORMAT = "toolimit-manifest/1"


class StageError(RuntimeError):
    """A stage could not produce its output; ``code`` is the CLI exit status."""

    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


EXIT_OK, EXIT_INPUT, EXIT_EMPTY_ALIGNMENT, EXIT_NO_FEASIBLE, EXIT_TRAINING_ABORTED = 0, 1, 2, 3, 4


def stage_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- manifest -------------------------------------------------------------------

def _read_json(path, default):
    p = Path(path)
    return json.loads(p.read_text()) if p.is_file() else default


def record_stage(cfg: RunConfig, stage: str, inputs, outputs, wall: float) -> dict:
    out = Path(cfg.out)
    manifest = _read_json(out / "manifest.json", {})
    if manifest.get("config_sha256") != cfg.digest():
        manifest = {"format": MANIFEST_FORMAT, "tool_version": __version__, "config_sha256": cfg.digest(),
                    "seed": cfg.seed, "stages": {}}
    manifest["stages"][stage] = {
        "inputs": {Path(p).name: sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    timings = _read_json(out / "timings.json", {})
    timings[stage] = round(wall, 3)
    (out / "timings.json").write_text(json.dumps(timings, indent=1, sort_keys=True) + "\n")
    return manifest


def verify_manifest(out) -> list:
    """Names of artifacts whose current hash differs from the manifest (empty when consistent)."""
    out = Path(out)
    manifest = _read_json(out / "manifest.json", None)
    if manifest is None:
        raise FileNotFoundError(out / "manifest.json")
    bad = []
    for stage in manifest["stages"].values():
        for name, digest in stage["outputs"].items():
            p = out / name
            if not p.is_file() or sha256_file(p) != digest:
                bad.append(name)
    return bad


def manifest_digest(out) -> str:
    return sha256_file(Path(out) / "manifest.json")


# -- shared helpers -------------------------------------------------------------

def _require(path, what):
    if not Path(path).is_file():
        raise StageError(f"missing {what}: {path}", EXIT_INPUT)
    return Path(path)


def _trajectory(cfg: RunConfig):
    _require(cfg.trajectory, "trajectory file")
    return load_trajectory(cfg.trajectory, reference=cfg.trajectory_reference)


def make_env_factory(cfg: RunConfig, params: SceneParams, chain, solution, reward_mode="sparse",
                     observe_objects=()):
    def factory():
        return RobotEnv(cfg.env, params, chain, solution.base, solution.states[0],
                        velocity_coef=cfg.learn.velocity_coef, reward_mode=reward_mode,
                        observe_objects=tuple(observe_objects))
    return factory


def _adr_state(cfg: RunConfig):
    if not cfg.adr.enabled:
        return None
    if not cfg.adr.target:
        raise StageError("[adr] enabled but no '<object>.<axis> = lo hi' ranges given", EXIT_INPUT)
    a = cfg.adr
    return AdrState.create(dict(a.target), delta=a.delta, window=a.window, tau_hi=a.tau_hi, tau_lo=a.tau_lo)


def _ppo_config(cfg: RunConfig, name: str) -> PPOConfig:
    d = {f: getattr(cfg.ppo, f) for f in cfg.ppo.__dataclass_fields__}
    d["seed"] = stage_seed(cfg.seed, name)
    return PPOConfig(**d)


def write_pairs(states, actions, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"s{i}" for i in range(states.shape[1])] + [f"a{i}" for i in range(actions.shape[1])])
        for t, (s, a) in enumerate(zip(states, actions)):
            w.writerow([t] + [repr(float(v)) for v in s] + [repr(float(v)) for v in a])


def read_pairs(path, n_actions: int):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] < 2 + n_actions:
        raise StageError(f"{path}: expected at least {2 + n_actions} columns", EXIT_INPUT)
    return rows[:, 1:-n_actions], rows[:, -n_actions:]


# -- stages -----------------------------------------------------------------------

def cmd_align(cfg: RunConfig, progress=None) -> CandidateSet:
    t0 = time.perf_counter()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = _trajectory(cfg)
    cands = align(traj, cfg.env, cfg.bounds, cfg.alignment, seed=cfg.seed, progress=progress)
    path = out / "candidates.json"
    save_candidates(cands, path)
    record_stage(cfg, "align", [cfg.trajectory], [path], time.perf_counter() - t0)
    if len(cands) == 0:
        raise StageError(f"alignment found no scene with nonzero reward in {cands.draws} draws",
                         EXIT_EMPTY_ALIGNMENT)
    return cands


@dataclass
class Selection:
    index: int
    params: SceneParams
    solution: object
    robot_reward: float
    tool_reward: float


def optimize_candidates(cfg: RunConfig, traj, cands: CandidateSet, chain, log=None):
    """Trajopt plus robot rollout for the leading candidates; returns all rows and the selection."""
    kp = extract_keypoints(traj)
    aligner = Aligner(traj, kp)
    ordered = sorted(cands.candidates, key=lambda c: (-c.mean_reward, c.index))[: cfg.trajopt.max_candidates]
    rows, best = [], None
    to = cfg.trajopt
    for c in ordered:
        poses = aligner(c.params.transform)
        problem = TrackingProblem(chain, poses.positions, poses.rotations, cfg.env.control_dt, q0=to.q0,
                                  weights=to.weights, region=to.region)
        search = type(to.search)(**{**to.search.__dict__, "seed": stage_seed(cfg.seed, f"base-{c.index}")})
        try:
            sol = solve_with_base(problem, search)
        except SolverError as exc:
            rows.append((c.index, c.mean_reward, None, float("nan"), 0.0, str(exc)))
            continue
        env = RobotEnv(cfg.env, c.params, chain, sol.base, sol.states[0], velocity_coef=cfg.learn.velocity_coef)
        try:
            _, _, reward, _ = rollout_demo(env, sol, seed=to.demo_seed)
        except SceneError as exc:
            # an invalid scene scores zero, as during alignment
            rows.append((c.index, c.mean_reward, sol, sol.cost, 0.0, str(exc)))
            continue
        except ValueError as exc:
            raise StageError(str(exc), EXIT_INPUT) from None
        rows.append((c.index, c.mean_reward, sol, sol.cost, reward, ""))
        if log:
            log(f"candidate {c.index}: tool reward {c.mean_reward:.3f}, robot reward {reward:.3f}, "
                f"cost {sol.cost:.4g}")
        if reward > 0 and (best is None or reward > best.robot_reward):
            best = Selection(c.index, c.params, sol, reward, c.mean_reward)
    return rows, best


def cmd_optimize(cfg: RunConfig, candidates_path=None, log=None) -> Selection:
    t0 = time.perf_counter()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cpath = _require(candidates_path or out / "candidates.json", "candidate file")
    cands = load_candidates(cpath)
    if len(cands) == 0:
        raise StageError("candidate file is empty", EXIT_EMPTY_ALIGNMENT)
    traj = _trajectory(cfg)
    chain = load_chain(cfg.robot)
    rows, best = optimize_candidates(cfg, traj, cands, chain, log)
    with open(out / "selection.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "tool_reward", "base_x", "base_y", "base_yaw", "cost", "robot_reward", "error"])
        for idx, tr, sol, cost, rr, err in rows:
            b = sol.base if sol is not None else None
            w.writerow([idx, repr(tr)] + ([repr(b.x), repr(b.y), repr(b.yaw)] if b else ["", "", ""])
                       + [repr(float(cost)), repr(float(rr)), err])
    outputs = [out / "selection.csv"]
    if best is None:
        record_stage(cfg, "optimize", [cpath, cfg.trajectory], outputs, time.perf_counter() - t0)
        raise StageError("no candidate gives nonzero reward when executed by the robot", EXIT_NO_FEASIBLE)
    (out / "scene.json").write_text(json.dumps(best.params.to_dict(), indent=1, sort_keys=True) + "\n")
    save_solution(best.solution, out / "solution.txt")
    env = RobotEnv(cfg.env, best.params, chain, best.solution.base, best.solution.states[0])
    S, A, _, _ = rollout_demo(env, best.solution, seed=cfg.trajopt.demo_seed)
    write_pairs(S, A, out / "demo_pairs.csv")
    outputs += [out / "scene.json", out / "solution.txt", out / "demo_pairs.csv"]
    record_stage(cfg, "optimize", [cpath, cfg.trajectory], outputs, time.perf_counter() - t0)
    return best


def _load_selected(cfg: RunConfig):
    out = Path(cfg.out)
    spath = _require(out / "solution.txt", "solution file")
    ppath = _require(out / "scene.json", "scene file")
    return load_solution(spath), SceneParams.from_dict(json.loads(ppath.read_text())), [spath, ppath]


def cmd_train(cfg: RunConfig, pairs_path=None, log=None):
    t0 = time.perf_counter()
    out = Path(cfg.out)
    sol, params, inputs = _load_selected(cfg)
    chain = load_chain(cfg.robot)
    lc = cfg.learn
    base_factory = make_env_factory(cfg, params, chain, sol)
    if pairs_path is not None:
        inputs.append(_require(pairs_path, "demonstration pairs"))
        S, A = read_pairs(pairs_path, chain.dof)
    else:
        S, A = perturbed_demo_pairs(base_factory, sol, lc.demo_episodes, lc.demo_noise, lc.demo_gain,
                                    seed=stage_seed(cfg.seed, "demo"))
    try:
        bc = bc_train((S, A), lc.bc_epochs, lc.bc_lr, lc.bc_momentum, lc.bc_batch, lc.log_std,
                      seed=stage_seed(cfg.seed, "bc"))
    except TrainingAborted as exc:
        raise StageError(str(exc), EXIT_TRAINING_ABORTED) from None
    with open(out / "bc_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mse"])
        w.writerows([i, repr(v)] for i, v in enumerate(bc.losses))
    policy = bc.policy
    adr = _adr_state(cfg)
    factory = base_factory
    if adr is not None:
        objs = adr.objects()
        policy.extend_inputs(np.concatenate([params.object_positions[o] for o in objs]),
                             np.full(3 * len(objs), cfg.adr.obs_std))
        factory = make_env_factory(cfg, params, chain, sol, observe_objects=objs)
    if log:
        log(f"behavior cloning: {len(S)} pairs, final mse {bc.final_mse:.3g}")
    try:
        res = ppo_finetune(policy, None, factory, _ppo_config(cfg, "ppo"), adr=adr,
                           progress=(lambda r: log(_curve_line(r))) if log else None)
    except TrainingAborted as exc:
        if exc.last_good is not None:
            save_checkpoint(exc.last_good, out / "policy.tlp")
        raise StageError(str(exc), EXIT_TRAINING_ABORTED) from None
    save_checkpoint(res.policy, out / "policy.tlp")
    save_checkpoint(res.value, out / "value.tlp")
    write_curve(res.curve, out / "curve.csv")
    outputs = [out / n for n in ("bc_loss.csv", "policy.tlp", "value.tlp", "curve.csv")]
    record_stage(cfg, "train", inputs, outputs, time.perf_counter() - t0)
    return res


def _curve_line(r):
    s = (f"iter {r['iteration']:3d} steps {r['env_steps']:7d} return {r['mean_return']:9.3f} "
         f"goal {r['mean_goal_return']:7.3f} success {r['success_rate']:.2f} "
         f"eval {r['eval_goal_return']:7.3f}/{r['eval_success_rate']:.2f}")
    if r.get("adr_ranges"):
        s += " adr " + " ".join(f"{k}=[{lo:.3f},{hi:.3f}]" for k, (lo, hi) in sorted(r["adr_ranges"].items()))
    return s


def cmd_eval(cfg: RunConfig, checkpoint=None, episodes=None, name="metrics.json") -> dict:
    t0 = time.perf_counter()
    out = Path(cfg.out)
    sol, params, inputs = _load_selected(cfg)
    cpath = _require(checkpoint or out / "policy.tlp", "policy checkpoint")
    policy = load_checkpoint(cpath)
    chain = load_chain(cfg.robot)
    adr = _adr_state(cfg)
    objs = adr.objects() if adr is not None and policy.n_in == 8 + chain.dof + 3 * len(adr.objects()) else ()
    factory = make_env_factory(cfg, params, chain, sol, observe_objects=objs)
    metrics = evaluate_policy(policy, factory, episodes or cfg.learn.eval_episodes,
                              seed=stage_seed(cfg.seed, "eval"), adr=adr if objs else None)
    path = out / name
    path.write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    record_stage(cfg, "eval" if name == "metrics.json" else name.rsplit(".", 1)[0], inputs + [cpath], [path],
                 time.perf_counter() - t0)
    return metrics


def cmd_baseline(cfg: RunConfig, kind: str = "sparse", log=None) -> dict:
    """PPO from a freshly initialized policy with the sparse or dense reward."""
    if kind not in ("sparse", "dense"):
        raise StageError("baseline kind must be 'sparse' or 'dense'", EXIT_INPUT)
    t0 = time.perf_counter()
    out = Path(cfg.out)
    sol, params, inputs = _load_selected(cfg)
    chain = load_chain(cfg.robot)
    factory = make_env_factory(cfg, params, chain, sol, reward_mode=kind)
    policy = scratch_policy(factory, cfg.learn.log_std, stage_seed(cfg.seed, f"baseline-{kind}"))
    try:
        res = ppo_finetune(policy, None, factory, _ppo_config(cfg, f"baseline-{kind}"),
                           progress=(lambda r: log(_curve_line(r))) if log else None)
    except TrainingAborted as exc:
        raise StageError(str(exc), EXIT_TRAINING_ABORTED) from None
    prefix = f"baseline_{kind}_"
    save_checkpoint(res.policy, out / f"{prefix}policy.tlp")
    write_curve(res.curve, out / f"{prefix}curve.csv")
    sparse_factory = make_env_factory(cfg, params, chain, sol)
    metrics = evaluate_policy(res.policy, sparse_factory, cfg.learn.eval_episodes, seed=stage_seed(cfg.seed, "eval"))
    metrics["env_steps"] = res.env_steps
    (out / f"{prefix}metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    outputs = [out / f"{prefix}{n}" for n in ("policy.tlp", "curve.csv", "metrics.json")]
    record_stage(cfg, f"baseline-{kind}", inputs, outputs, time.perf_counter() - t0)
    return metrics


def scratch_policy(env_factory, log_std, seed) -> GaussianPolicy:
    """Fresh policy whose input normalizer comes from two episodes of its own initial behavior."""
    env = env_factory()
    policy = GaussianPolicy(env.state_dim, env.action_dim, log_std, seed=seed)
    states = []
    rng = np.random.default_rng(seed)
    for e in range(2):
        s = env.reset(seed + e)
        for _ in range(env.config.horizon):
            states.append(s)
            a = policy.mean(s) + np.exp(policy.log_std) * rng.standard_normal(env.action_dim)
            s, _, done, _ = env.step(a)
            if done:
                break
    states = np.array(states)
    policy.set_normalizer(states.mean(axis=0), states.std(axis=0), floor=1e-3)
    return policy


def cmd_demo_replay(cfg: RunConfig, solution_path=None, seed: int = 0) -> dict:
    """Execute a stored solution in the environment and dump the episode trace."""
    t0 = time.perf_counter()
    out = Path(cfg.out)
    spath = _require(solution_path or out / "solution.txt", "solution file")
    ppath = _require(out / "scene.json", "scene file")
    sol = load_solution(spath)
    params = SceneParams.from_dict(json.loads(ppath.read_text()))
    chain = load_chain(cfg.robot)
    env = RobotEnv(cfg.env, params, chain, sol.base, sol.states[0])
    _, _, reward, trace = rollout_demo(env, sol, seed=seed)
    trace.dump(out / "replay_trace.csv")
    result = {"goal_return": reward, "success": bool(episode_success(env)), "steps": len(trace)}
    record_stage(cfg, "demo-replay", [spath, ppath], [out / "replay_trace.csv"], time.perf_counter() - t0)
    return result


def run_all(cfg: RunConfig, log=None) -> dict:
    cmd_align(cfg)
    cmd_optimize(cfg, log=log)
    cmd_train(cfg, log=log)
    return cmd_eval(cfg)


__all__ = [
    "EXIT_EMPTY_ALIGNMENT", "EXIT_INPUT", "EXIT_NO_FEASIBLE", "EXIT_OK", "EXIT_TRAINING_ABORTED", "Selection",
    "StageError", "cmd_align", "cmd_baseline", "cmd_demo_replay", "cmd_eval",
    "cmd_optimize", "cmd_train", "make_env_factory", "manifest_digest", "optimize_candidates", "read_pairs",
    "record_stage", "run_all", "scratch_policy", "sha256_file", "stage_seed", "verify_manifest",
    "write_pairs",
]
