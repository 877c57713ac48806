"""Fixed-shape ReLU networks with a hand-written backward pass.

Layers are ``affine -> ReLU -> affine -> ReLU -> affine``. Inputs are
normalized as ``(x - obs_mean) / obs_std`` before the first layer; the
normalizer is part of the model and is never trained by gradients.
"""

from __future__ import annotations

import math

import numpy as np

HIDDEN = (400, 300)
LOG_2PI = math.log(2.0 * math.pi)


class MLP:
    """Two hidden ReLU layers and a linear head, all float64."""

    def __init__(self, n_in: int, n_out: int, hidden=HIDDEN, seed=0, out_scale: float = 1.0):
        if n_in < 1 or n_out < 1:
            raise ValueError("layer sizes must be positive")
        rng = np.random.default_rng(seed)
        sizes = (n_in, *hidden, n_out)
        self.params = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = math.sqrt(2.0 / a) * (out_scale if i == len(sizes) - 2 else 1.0)
            self.params.append(rng.standard_normal((a, b)) * scale)
            self.params.append(np.zeros(b))

    @property
    def n_in(self) -> int:
        return self.params[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.params[-1].shape[0]

    def forward(self, x):
        """Output and the activations needed by :meth:`backward`."""
        W1, b1, W2, b2, W3, b3 = self.params
        h1 = np.maximum(x @ W1 + b1, 0.0)
        h2 = np.maximum(h1 @ W2 + b2, 0.0)
        return h2 @ W3 + b3, (x, h1, h2)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout):
        """Parameter gradients for upstream gradient ``dout`` (batch, n_out)."""
        x, h1, h2 = cache
        W1, _, W2, _, W3, _ = self.params
        gW3 = h2.T @ dout
        gb3 = dout.sum(axis=0)
        d2 = (dout @ W3.T) * (h2 > 0.0)
        gW2 = h1.T @ d2
        gb2 = d2.sum(axis=0)
        d1 = (d2 @ W2.T) * (h1 > 0.0)
        gW1 = x.T @ d1
        gb1 = d1.sum(axis=0)
        return [gW1, gb1, gW2, gb2, gW3, gb3]

    def extend_inputs(self, k: int) -> None:
        """Append ``k`` input columns whose weights start at zero."""
        self.params[0] = np.vstack([self.params[0], np.zeros((k, self.params[0].shape[1]))])

    def copy(self) -> "MLP":
        new = MLP.__new__(MLP)
        new.params = [p.copy() for p in self.params]
        return new


class _Normalized:
    def _init_norm(self, n_in):
        self.obs_mean = np.zeros(n_in)
        self.obs_std = np.ones(n_in)

    @property
    def n_in(self) -> int:
        return self.net.n_in

    def normalize(self, obs):
        obs = np.asarray(obs, dtype=float)
        if obs.shape[-1] != self.n_in:
            raise ValueError(f"expected observations of size {self.n_in}, got {obs.shape[-1]}")
        return (obs - self.obs_mean) / self.obs_std

    def set_normalizer(self, mean, std, floor: float = 1e-6):
        std = np.asarray(std, dtype=float).copy()
        std[std < floor] = 1.0
        self.obs_mean = np.asarray(mean, dtype=float).copy()
        self.obs_std = std

    def extend_inputs(self, mean, std):
        """Accept extra observation entries, initially ignored by the network."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        std = np.atleast_1d(np.asarray(std, dtype=float))
        self.net.extend_inputs(mean.size)
        self.obs_mean = np.concatenate([self.obs_mean, mean])
        self.obs_std = np.concatenate([self.obs_std, std])


class GaussianPolicy(_Normalized):
    """Diagonal Gaussian over joint velocities with a state-independent log-std."""

    def __init__(self, n_obs: int, n_act: int, log_std: float = math.log(0.1), seed=0):
        self.net = MLP(n_obs, n_act, seed=seed, out_scale=0.01)
        self.log_std = np.full(n_act, float(log_std))
        self._init_norm(n_obs)

    @property
    def n_act(self) -> int:
        return self.net.n_out

    @property
    def params(self):
        return self.net.params + [self.log_std]

    def mean(self, obs):
        return self.net(self.normalize(obs))

    def forward(self, obs):
        """``(mu, sigma)`` for one or many observations."""
        return self.mean(obs), np.exp(self.log_std)

    def sample(self, obs, rng):
        mu, sigma = self.forward(obs)
        return mu + sigma * rng.standard_normal(np.shape(mu))

    def log_prob(self, obs, actions):
        mu = self.mean(obs)
        return gaussian_log_prob(actions, mu, self.log_std)

    def copy(self) -> "GaussianPolicy":
        new = GaussianPolicy.__new__(GaussianPolicy)
        new.net = self.net.copy()
        new.log_std = self.log_std.copy()
        new.obs_mean = self.obs_mean.copy()
        new.obs_std = self.obs_std.copy()
        return new


class ValueNet(_Normalized):
    def __init__(self, n_obs: int, seed=0):
        self.net = MLP(n_obs, 1, seed=seed)
        self._init_norm(n_obs)

    @property
    def params(self):
        return self.net.params

    def __call__(self, obs):
        return self.net(self.normalize(obs))[..., 0]

    def copy(self) -> "ValueNet":
        new = ValueNet.__new__(ValueNet)
        new.net = self.net.copy()
        new.obs_mean = self.obs_mean.copy()
        new.obs_std = self.obs_std.copy()
        return new


def gaussian_log_prob(actions, mu, log_std):
    """Log density of a diagonal Gaussian, summed over the last axis."""
    z = (np.asarray(actions, dtype=float) - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def policy_forward(policy: GaussianPolicy, s):
    return policy.forward(s)


def sample_action(mu, sigma, seed):
    """One draw from N(mu, diag(sigma^2)); ``seed`` may be an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mu = np.asarray(mu, dtype=float)
    return mu + np.asarray(sigma, dtype=float) * rng.standard_normal(mu.shape)


def backprop_check(net: MLP, batch: int = 8, seed: int = 0, eps: float = 1e-6, n_probe: int = 200):
    """Largest relative error between backprop and central differences.

    The loss is ``0.5 * sum((net(x) - y)^2)`` on a random batch. ``n_probe``
    randomly chosen parameter entries are checked (all entries if there are
    fewer). Relative error is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, net.n_in))
    y = rng.standard_normal((batch, net.n_out))

    def loss():
        out = net(x) - y
        return 0.5 * float(np.sum(out * out))

    out, cache = net.forward(x)
    grads = net.backward(cache, out - y)
    worst = 0.0
    sizes = [p.size for p in net.params]
    total = sum(sizes)
    flat_ids = np.arange(total) if total <= n_probe else rng.choice(total, n_probe, replace=False)
    offsets = np.cumsum([0] + sizes)
    for fid in flat_ids:
        k = int(np.searchsorted(offsets, fid, side="right") - 1)
        j = int(fid - offsets[k])
        p = net.params[k].reshape(-1)
        old = p[j]
        p[j] = old + eps
        lp = loss()
        p[j] = old - eps
        lm = loss()
        p[j] = old
        num = (lp - lm) / (2 * eps)
        ana = grads[k].reshape(-1)[j]
        worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-8))
    return worst
