"""Behavior cloning, PPO fine-tuning and policy evaluation.

``env_factory`` is a zero-argument callable returning a fresh
:class:`~toolimit.envsim.RobotEnv`; episodes are run with
``env.reset(seed, offsets)`` using seeds derived from the trainer's seed, so
every run is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..envsim.core import success
from .adr import AdrState, adr_update
from .networks import GaussianPolicy, ValueNet


class TrainingAborted(RuntimeError):
    """A loss became non-finite; ``last_good`` holds the policy before the failing update."""

    def __init__(self, message, last_good=None, iteration: int = -1):
        super().__init__(message)
        self.last_good = last_good
        self.iteration = iteration


# -- returns and advantages ---------------------------------------------------

def discounted_return(rewards, gamma: float = 0.999) -> float:
    """``sum_t gamma^t r_t`` accumulated from the back."""
    total = 0.0
    for r in reversed(np.asarray(rewards, dtype=float)):
        total = r + gamma * total
    return float(total)


def gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimates; ``dones[t]`` ends the episode after step ``t``."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    adv = np.zeros_like(rewards)
    running = 0.0
    next_value = last_value
    for t in range(len(rewards) - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv


def episode_success(env) -> bool:
    c = env.config
    return success(env.trace, spheres_needed=c.success_spheres, success_time=c.success_time,
                   planted_tol=c.planted_tol)


def episode_seed(seed: int, *keys) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


# -- optimizers ---------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm and norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


# -- behavior cloning ---------------------------------------------------------

@dataclass
class BCResult:
    policy: GaussianPolicy
    losses: list
    final_mse: float


def bc_train(pairs, epochs: int = 2000, lr: float = 1e-3, momentum: float = 0.9, batch_size: int = 32,
             log_std: float = math.log(0.1), seed: int = 0, shuffle: bool = True,
             policy: GaussianPolicy | None = None) -> BCResult:
    """Fit the policy mean to demonstration actions by minibatch SGD with momentum.

    Args:
        pairs: ``(states, actions)`` arrays or a sequence of ``(s, a)`` tuples.
        policy: continue from this policy instead of a fresh one (normalizer kept).

    Returns:
        BCResult with the per-epoch mean squared error over the whole set.
    """
    states, actions = _as_arrays(pairs)
    n = states.shape[0]
    if policy is None:
        policy = GaussianPolicy(states.shape[1], actions.shape[1], log_std, seed=seed)
        policy.set_normalizer(states.mean(axis=0), states.std(axis=0), floor=1e-3)
    net = policy.net
    vel = [np.zeros_like(p) for p in net.params]
    rng = np.random.default_rng(seed)
    x_all = policy.normalize(states)
    losses = []

    def full_mse():
        d = net(x_all) - actions
        return float(np.mean(d * d))

    for epoch in range(epochs):
        order = rng.permutation(n) if shuffle else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, cache = net.forward(x_all[idx])
            diff = out - actions[idx]
            grads = net.backward(cache, 2.0 * diff / diff.size)
            for p, g, v in zip(net.params, grads, vel):
                v *= momentum
                v -= lr * g
                p += v
        mse = full_mse()
        if not math.isfinite(mse):
            raise TrainingAborted(f"behavior cloning loss became {mse} at epoch {epoch} "
                                  f"(lr={lr}, momentum={momentum}, batch={batch_size})", iteration=epoch)
        losses.append(mse)
    return BCResult(policy, losses, losses[-1] if losses else full_mse())


def perturbed_demo_pairs(env_factory, solution, episodes: int = 8, noise: float = 0.1, gain: float = 4.0,
                         seed: int = 0):
    """Demonstration pairs from noisy executions of a tracking solution.

    The executed action is the corrective label ``v*_t + gain * (q*_t - q_t)``
    plus Gaussian noise of std ``noise`` times the joint velocity limits; the
    recorded action is the label, so the policy learns to return to the
    demonstrated joint path. Episode 0 is noise-free and reproduces
    ``solution.velocities`` exactly.
    """
    env = env_factory()
    H = env.config.horizon
    states, actions = [], []
    for e in range(episodes):
        rng = np.random.default_rng(episode_seed(seed, 3, e))
        s = env.reset(episode_seed(seed, 4, e))
        for t in range(min(H, solution.velocities.shape[0])):
            label = solution.velocities[t] + gain * (solution.states[t] - env.q)
            states.append(s)
            actions.append(label)
            a = label if e == 0 else label + noise * env.limits * rng.standard_normal(label.shape)
            s, _, done, _ = env.step(a)
            if done:
                break
    return np.array(states), np.array(actions)


def _as_arrays(pairs):
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        states, actions = pairs
    else:
        pairs = list(pairs)
        if not pairs:
            raise ValueError("behavior cloning needs at least one pair")
        states = [p[0] for p in pairs]
        actions = [p[1] for p in pairs]
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if states.shape[0] != actions.shape[0] or states.shape[0] < 1:
        raise ValueError("states and actions must be nonempty and equally long")
    return states, actions


# -- rollouts -----------------------------------------------------------------

@dataclass
class RolloutBuffer:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def add(self, s, a, logp, r, v, done):
        if not math.isfinite(r):
            raise ValueError("non-finite reward")
        self.states.append(s)
        self.actions.append(a)
        self.log_probs.append(logp)
        self.rewards.append(r)
        self.values.append(v)
        self.dones.append(done)

    def __len__(self) -> int:
        return len(self.rewards)

    def arrays(self):
        return (np.array(self.states), np.array(self.actions), np.array(self.log_probs),
                np.array(self.rewards), np.array(self.values), np.array(self.dones, dtype=bool))


@dataclass
class EpisodeStats:
    ret: float
    goal_return: float
    success: bool
    steps: int
    violations: int


def run_episode(env, policy, seed, offsets=None, rng=None, value=None, buffer=None):
    """One episode; samples actions when ``rng`` is given, otherwise acts with the mean."""
    s = env.reset(seed, offsets)
    ret = goal = 0.0
    viol = steps = 0
    for t in range(env.config.horizon):
        mu = policy.mean(s)
        if rng is None:
            a = mu
        else:
            a = mu + np.exp(policy.log_std) * rng.standard_normal(mu.shape)
        s_next, r, done, info = env.step(a)
        ret += r
        goal += info["goal_reward"]
        viol += int(info["violation"])
        steps += 1
        last = done or t == env.config.horizon - 1
        if buffer is not None:
            logp = float(np.sum(-0.5 * ((a - mu) * np.exp(-policy.log_std)) ** 2 - policy.log_std
                                - 0.5 * math.log(2 * math.pi)))
            buffer.add(s, a, logp, r, float(value(s)), last)
        s = s_next
        if done:
            break
    return EpisodeStats(ret, goal, episode_success(env), steps, viol)


def evaluate_policy(policy, env_factory, episodes: int = 10, seed: int = 0, ranges: dict | None = None,
                    adr: AdrState | None = None) -> dict:
    """Deterministic (mean-action) evaluation.

    With ``adr`` given, each episode draws object offsets uniformly from
    ``ranges`` (default: the ADR target ranges).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = env_factory()
    stats = []
    for e in range(episodes):
        offsets = None
        if adr is not None:
            rng = np.random.default_rng(episode_seed(seed, 7, e))
            offsets = adr.sample_offsets(rng, ranges if ranges is not None else adr.target)
        stats.append(run_episode(env, policy, episode_seed(seed, 0, e), offsets))
    steps = sum(s.steps for s in stats)
    return {
        "episodes": episodes,
        "mean_goal_return": float(np.mean([s.goal_return for s in stats])),
        "mean_return": float(np.mean([s.ret for s in stats])),
        "success_rate": float(np.mean([s.success for s in stats])),
        "violation_rate": float(sum(s.violations for s in stats) / max(steps, 1)),
        "successes": [bool(s.success) for s in stats],
    }


# -- PPO ------------------------------------------------------------------------

@dataclass
class PPOConfig:
    gamma: float = 0.999
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 256
    lr: float = 3e-5
    vf_coef: float = 0.5
    target_kl: float = 0.02
    value_warmup: int = 20
    max_grad_norm: float = 0.5
    episodes_per_iter: int = 8
    iters: int = 20
    eval_episodes: int = 3
    keep_best: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.episodes_per_iter < 1 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("episodes_per_iter, epochs and minibatch must be positive")


@dataclass
class PPOResult:
    policy: GaussianPolicy
    value: ValueNet
    curve: list
    env_steps: int
    adr: AdrState | None = None


def ppo_loss_grads(policy, value, states, actions, old_logp, adv, returns, clip, vf_coef):
    """Clipped-surrogate and value losses with their parameter gradients.

    Returns:
        (policy loss, value loss, ratio, policy grads incl. log_std, value grads)
    """
    B = states.shape[0]
    x = policy.normalize(states)
    mu, cache = policy.net.forward(x)
    inv = np.exp(-policy.log_std)
    z = (actions - mu) * inv
    logp = np.sum(-0.5 * z * z - policy.log_std - 0.5 * math.log(2 * math.pi), axis=1)
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    pl = -float(np.mean(np.minimum(ratio * adv, clipped * adv)))
    active = ~(((adv >= 0) & (ratio > 1.0 + clip)) | ((adv < 0) & (ratio < 1.0 - clip)))
    dlogp = np.where(active, -adv * ratio / B, 0.0)
    dmu = dlogp[:, None] * z * inv
    gnet = policy.net.backward(cache, dmu)
    glog = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0)
    xv = value.normalize(states)
    v, vcache = value.net.forward(xv)
    err = v[:, 0] - returns
    vl = float(np.mean(err * err))
    gval = value.net.backward(vcache, (vf_coef * 2.0 * err / B)[:, None])
    return pl, vl, ratio, gnet + [glog], gval


def approx_kl(policy, states, actions, old_logp) -> float:
    """Sample estimate of KL(old || new), ``mean((r - 1) - log r)``."""
    log_ratio = policy.log_prob(states, actions) - old_logp
    return float(np.mean(np.expm1(log_ratio) - log_ratio))


def _fit_value(value, states, returns, epochs, minibatch, rng, lr=1e-3):
    opt = Adam(value.params, lr=lr)
    for _ in range(epochs):
        order = rng.permutation(len(returns))
        for start in range(0, len(returns), minibatch):
            idx = order[start:start + minibatch]
            v, cache = value.net.forward(value.normalize(states[idx]))
            err = v[:, 0] - returns[idx]
            opt.step(value.params, value.net.backward(cache, (err / len(idx))[:, None]))


def ppo_finetune(policy: GaussianPolicy, value: ValueNet | None, env_factory, config: PPOConfig | None = None,
                 adr: AdrState | None = None, progress=None) -> PPOResult:
    """PPO with GAE on the environment's per-step reward (goal reward minus velocity penalty).

    With ``keep_best`` the returned policy is the one with the highest
    deterministic evaluation (success rate, then mean return including the
    velocity penalty, earliest first), including the starting policy. Under ADR, offsets for training
    episodes come from the current ranges and evaluations use the target
    ranges, so candidates are compared on the same distribution.
    """
    cfg = config or PPOConfig()
    policy = policy.copy()
    if value is None:
        value = ValueNet(policy.n_in, seed=cfg.seed + 1)
        value.set_normalizer(policy.obs_mean, policy.obs_std)
    else:
        value = value.copy()
    env = env_factory()
    if env.state_dim != policy.n_in:
        raise ValueError(f"policy expects {policy.n_in} inputs, environment gives {env.state_dim}")
    opt = Adam(policy.params + value.params, lr=cfg.lr)
    curve = []
    total_steps = 0

    def evaluate(pol):
        m = evaluate_policy(pol, env_factory, cfg.eval_episodes, seed=cfg.seed + 1000003, adr=adr)
        return (m["success_rate"], m["mean_return"]), m

    best_key, best_eval = evaluate(policy)
    best = policy.copy()
    for it in range(cfg.iters):
        buf = RolloutBuffer()
        stats = []
        for e in range(cfg.episodes_per_iter):
            rng = np.random.default_rng(episode_seed(cfg.seed, it, e, 1))
            offsets = adr.sample_offsets(rng) if adr is not None else None
            st = run_episode(env, policy, episode_seed(cfg.seed, it, e), offsets, rng, value, buf)
            stats.append(st)
            if adr is not None:
                adr = adr_update(adr, st.success)
        total_steps += len(buf)
        S, A, LP, R, V, D = buf.arrays()
        adv = gae(R, V, D, cfg.gamma, cfg.lam)
        returns = adv + V
        if len(adv) > 1 and np.std(adv) > 1e-12:
            adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
        else:
            adv_n = adv - adv.mean()
        snapshot = (policy.copy(), value.copy())
        rng = np.random.default_rng(episode_seed(cfg.seed, it, 2))
        if it == 0 and cfg.value_warmup > 0:
            _fit_value(value, S, returns, cfg.value_warmup, cfg.minibatch, rng)
            V = value(S)
            adv = gae(R, V, D, cfg.gamma, cfg.lam)
            returns = adv + V
            adv_n = (adv - adv.mean()) / (adv.std() + 1e-8) if np.std(adv) > 1e-12 else adv - adv.mean()
        first_ratio = None
        epochs_run = 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(R))
            for start in range(0, len(R), cfg.minibatch):
                idx = order[start:start + cfg.minibatch]
                pl, vl, ratio, gp, gv = ppo_loss_grads(policy, value, S[idx], A[idx], LP[idx], adv_n[idx],
                                                       returns[idx], cfg.clip, cfg.vf_coef)
                if first_ratio is None:
                    first_ratio = float(np.max(np.abs(ratio - 1.0)))
                if not (math.isfinite(pl) and math.isfinite(vl)):
                    raise TrainingAborted(f"PPO loss became non-finite at iteration {it}", snapshot[0], it)
                grads, _ = clip_grad_norm(gp + gv, cfg.max_grad_norm)
                opt.step(policy.params + value.params, grads)
            epochs_run += 1
            if cfg.target_kl and approx_kl(policy, S, A, LP) > 1.5 * cfg.target_kl:
                break
        key, ev = evaluate(policy)
        if key > best_key or not cfg.keep_best:
            best_key, best = key, policy.copy()
        row = {
            "iteration": it,
            "env_steps": total_steps,
            "mean_return": float(np.mean([s.ret for s in stats])),
            "mean_goal_return": float(np.mean([s.goal_return for s in stats])),
            "success_rate": float(np.mean([s.success for s in stats])),
            "eval_goal_return": ev["mean_goal_return"],
            "eval_success_rate": ev["success_rate"],
            "first_epoch_ratio_dev": first_ratio,
            "epochs": epochs_run,
        }
        if adr is not None:
            row["adr_ranges"] = {k: tuple(v) for k, v in adr.ranges.items()}
        curve.append(row)
        if progress:
            progress(row)
    return PPOResult(best if cfg.keep_best else policy, value, curve, total_steps, adr)
