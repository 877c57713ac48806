import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from toolimit.envsim.core import EpisodeTrace, success
from toolimit.envsim.robot import RobotEnv
from toolimit.fixtures import spade_fixture
from toolimit.kinematics import load_chain
from toolimit.policylearn import (MLP, AdrState, GaussianPolicy, PPOConfig, ValueNet, adr_update,
                                  backprop_check, bc_train, discounted_return, episode_seed, evaluate_policy,
                                  gae, gaussian_log_prob, load_checkpoint, perturbed_demo_pairs, policy_forward,
                                  ppo_finetune, ppo_loss_grads, read_curve, run_episode, sample_action,
                                  save_checkpoint, write_curve)
from toolimit.policylearn.checkpoint import checkpoint_bytes
from toolimit.trajectory import apply_alignment, extract_keypoints
from toolimit.trajopt import BaseRegion, TrackingProblem, rollout_demo, solve_with_base


def zero_policy(n_obs, n_act, bias=None):
    pol = GaussianPolicy(n_obs, n_act)
    for p in pol.net.params:
        p[...] = 0.0
    if bias is not None:
        pol.net.params[-1][:] = bias
    return pol


class ReplayPolicy:
    """Plays back a velocity sequence indexed by the time entry of the state."""

    def __init__(self, velocities, horizon):
        self.v = velocities
        self.H = horizon
        self.log_std = np.zeros(velocities.shape[1])

    def mean(self, s):
        return self.v[int(round(s[-1] * self.H))]


@pytest.fixture(scope="module")
def spade_demo():
    fx = spade_fixture()
    chain = load_chain("panda")
    seq = apply_alignment(fx.trajectory, fx.params.transform, extract_keypoints(fx.trajectory))
    prob = TrackingProblem.from_poses(chain, seq, fx.env.control_dt, q0="ik",
                                      region=BaseRegion((0.0, 0.6), (-0.5, 0.5)))
    sol = solve_with_base(prob)

    def factory():
        return RobotEnv(fx.env, fx.params, chain, sol.base, sol.states[0])

    return fx, sol, factory


class TestPolicy:
    def test_zero_weights_give_bias(self):
        b = np.array([0.1, -0.2, 0.3])
        mu, sigma = policy_forward(zero_policy(5, 3, b), np.ones(5))
        np.testing.assert_array_equal(mu, b)
        np.testing.assert_allclose(sigma, 0.1)

    def test_zero_sigma_sample(self):
        mu = np.array([1.0, 2.0])
        assert np.array_equal(sample_action(mu, np.zeros(2), 3), mu)

    def test_sample_deterministic(self):
        assert np.array_equal(sample_action(np.zeros(4), np.ones(4), 7), sample_action(np.zeros(4), np.ones(4), 7))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            policy_forward(GaussianPolicy(5, 3), np.ones(4))

    @given(st.integers(0, 2**31))
    def test_log_prob_oracle(self, seed):
        r = np.random.default_rng(seed)
        mu = r.normal(size=6)
        log_std = r.uniform(-3, 1, 6)
        a = sample_action(mu, np.exp(log_std), r)
        dens = 1.0
        for ai, mi, si in zip(a, mu, np.exp(log_std)):
            dens *= math.exp(-0.5 * ((ai - mi) / si) ** 2) / (si * math.sqrt(2 * math.pi))
        assert abs(gaussian_log_prob(a, mu, log_std) - math.log(dens)) < 1e-10

    def test_architecture(self):
        pol = GaussianPolicy(15, 7)
        assert [p.shape for p in pol.net.params] == [(15, 400), (400,), (400, 300), (300,), (300, 7), (7,)]
        assert all(p.dtype == np.float64 for p in pol.params)
        assert ValueNet(15)(np.zeros((4, 15))).shape == (4,)


class TestBackprop:
    def test_full_net(self):
        """Relative error below 1e-4 over 200 probed parameters."""
        assert backprop_check(MLP(15, 7, seed=3), n_probe=200) < 1e-4

    def test_linear_head_exact(self):
        # the loss is quadratic in the head, so central differences are exact up to rounding
        net = MLP(4, 3, hidden=(5, 6), seed=1)
        r = np.random.default_rng(0)
        x, y = r.normal(size=(8, 4)), r.normal(size=(8, 3))
        out, cache = net.forward(x)
        grads = net.backward(cache, out - y)
        loss = lambda: 0.5 * float(np.sum((net(x) - y) ** 2))
        for k in (4, 5):
            p = net.params[k].reshape(-1)
            for j in range(p.size):
                old = p[j]
                p[j] = old + 1e-3
                lp = loss()
                p[j] = old - 1e-3
                lm = loss()
                p[j] = old
                num = (lp - lm) / 2e-3
                assert abs(grads[k].reshape(-1)[j] - num) <= 1e-10 * max(1.0, abs(num))

    def test_dead_unit(self):
        net = MLP(4, 2, hidden=(6, 5), seed=2)
        net.params[1][3] = -1e6
        x = np.random.default_rng(1).normal(size=(10, 4))
        out, cache = net.forward(x)
        g = net.backward(cache, out)
        assert not g[0][:, 3].any() and g[1][3] == 0.0

    def test_small_net_all_entries(self):
        assert backprop_check(MLP(3, 2, hidden=(4, 5), seed=5), n_probe=10_000) < 1e-6


class TestBC:
    def test_memorizes_single_pair(self):
        s = np.array([[0.3, -1.0, 2.0]])
        a = np.array([[0.5, -0.25]])
        res = bc_train((s, a), epochs=2000)
        assert float(np.mean((res.policy.mean(s) - a) ** 2)) < 1e-6
        assert res.final_mse < 1e-6

    def test_log_std_initialized(self):
        res = bc_train([(np.zeros(3), np.zeros(2))], epochs=1, log_std=-1.5)
        assert np.all(res.policy.log_std == -1.5)

    def test_shuffle_stability(self):
        r = np.random.default_rng(0)
        S = r.normal(size=(256, 15))
        A = np.tanh(S[:, :7] + 0.5 * S[:, 7:14])
        a = bc_train((S, A), epochs=60, seed=1, shuffle=True).final_mse
        b = bc_train((S, A), epochs=60, seed=1, shuffle=False).final_mse
        assert abs(a - b) <= 0.1 * max(a, b)

    def test_loss_nonincreasing_small_lr(self, spade_demo):
        fx, sol, factory = spade_demo
        S, A = perturbed_demo_pairs(factory, sol, episodes=2)
        res = bc_train((S, A), epochs=40, lr=1e-4)
        assert np.all(np.diff(res.losses) <= 0)

    def test_empty_and_mismatch(self):
        with pytest.raises(ValueError):
            bc_train([], epochs=1)
        with pytest.raises(ValueError):
            bc_train((np.zeros((3, 2)), np.zeros((2, 2))), epochs=1)

    def test_non_finite_loss(self):
        with pytest.raises(RuntimeError, match="epoch"):
            with np.errstate(over="ignore", invalid="ignore"):
                bc_train((np.ones((4, 3)), np.full((4, 2), 1e300)), epochs=3, lr=10.0)


class TestDemonstrations:
    def test_rollout_keeps_reward(self, spade_demo):
        fx, sol, factory = spade_demo
        _, _, total, _ = rollout_demo(factory(), sol, seed=0)
        assert total > 0

    def test_noise_free_episode_reproduces_solution(self, spade_demo):
        fx, sol, factory = spade_demo
        S, A = perturbed_demo_pairs(factory, sol, episodes=1)
        S0, A0, _, _ = rollout_demo(factory(), sol, seed=episode_seed(0, 4, 0))
        np.testing.assert_allclose(A, A0, atol=1e-9)
        np.testing.assert_allclose(S, S0, atol=1e-9)

    def test_bc_policy_keeps_reward(self, spade_demo):
        fx, sol, factory = spade_demo
        S, A = perturbed_demo_pairs(factory, sol, episodes=4)
        res = bc_train((S, A), epochs=100, batch_size=64)
        m = evaluate_policy(res.policy, factory, episodes=2)
        assert m["mean_goal_return"] > 0


class TestReturns:
    @given(st.integers(0, 2**31), st.floats(0.0, 1.0))
    def test_discounted_return_oracle(self, seed, gamma):
        r = np.random.default_rng(seed).normal(size=20)
        oracle = sum(gamma ** t * r[t] for t in range(20))
        assert abs(discounted_return(r, gamma) - oracle) < 1e-12

    def test_gae_gamma_zero(self):
        adv = gae([1.0, 2.0], [0.25, 0.5], [False, True], gamma=0.0, lam=0.95, last_value=9.0)
        np.testing.assert_array_equal(adv, [0.75, 1.5])

    def test_gae_lambda_one_is_return_minus_value(self):
        r = np.array([0.0, 1.0, 0.0, 2.0])
        v = np.array([0.3, 0.1, 0.4, 0.2])
        adv = gae(r, v, [False, False, False, True], gamma=0.9, lam=1.0)
        ret = [discounted_return(r[t:], 0.9) for t in range(4)]
        np.testing.assert_allclose(adv, np.array(ret) - v, atol=1e-14)

    def test_gae_resets_at_done(self):
        adv = gae([1.0, 1.0], [0.0, 0.0], [True, True], gamma=0.9, lam=0.9)
        np.testing.assert_array_equal(adv, [1.0, 1.0])


class TestPPO:
    def test_loss_grads_fd(self):
        r = np.random.default_rng(0)
        pol = GaussianPolicy(6, 3, seed=1)
        val = ValueNet(6, seed=2)
        for p in pol.net.params:
            p += 0.05 * r.normal(size=p.shape)
        S = r.normal(size=(16, 6))
        A = pol.mean(S) + 0.1 * r.normal(size=(16, 3))
        old = pol.log_prob(S, A) + 0.05 * r.normal(size=16)
        adv = r.normal(size=16)
        ret = r.normal(size=16)
        pl, vl, ratio, gp, gv = ppo_loss_grads(pol, val, S, A, old, adv, ret, 0.2, 0.5)
        worst = 0.0
        h = 1e-6
        for params, grads, which in ((pol.params, gp, 0), (val.params, gv, 1)):
            for k, p in enumerate(params):
                flat = p.reshape(-1)
                for j in r.choice(flat.size, min(flat.size, 15), replace=False):
                    old_v = flat[j]
                    vals = []
                    for d in (h, -h):
                        flat[j] = old_v + d
                        out = ppo_loss_grads(pol, val, S, A, old, adv, ret, 0.2, 0.5)
                        vals.append(out[0] if which == 0 else 0.5 * out[1])
                    flat[j] = old_v
                    num = (vals[0] - vals[1]) / (2 * h)
                    ana = grads[k].reshape(-1)[j]
                    worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-8))
        assert worst < 1e-4

    def test_ratio_one_when_unchanged(self):
        pol = GaussianPolicy(4, 2, seed=0)
        S = np.random.default_rng(0).normal(size=(5, 4))
        A = pol.sample(S, np.random.default_rng(1))
        ratio = ppo_loss_grads(pol, ValueNet(4), S, A, pol.log_prob(S, A), np.ones(5), np.zeros(5), 0.2, 0.5)[2]
        np.testing.assert_allclose(ratio, 1.0, atol=1e-12)

    def test_first_epoch_ratio_and_improvement(self, spade_demo):
        fx, sol, factory = spade_demo
        S, A = perturbed_demo_pairs(factory, sol, episodes=4)
        bc = bc_train((S, A), epochs=100, batch_size=64).policy
        cfg = PPOConfig(iters=2, episodes_per_iter=2, eval_episodes=2, seed=3)
        res = ppo_finetune(bc, None, factory, cfg)
        assert all(row["first_epoch_ratio_dev"] < 1e-12 for row in res.curve)
        assert 0 < res.env_steps <= 2 * 2 * fx.env.horizon
        before = evaluate_policy(bc, factory, episodes=2, seed=cfg.seed + 1000003)
        after = evaluate_policy(res.policy, factory, episodes=2, seed=cfg.seed + 1000003)
        # keep_best never returns a policy that evaluates worse than the start
        assert (after["success_rate"], after["mean_return"]) >= (before["success_rate"], before["mean_return"])

    def test_dimension_check(self, spade_demo):
        _, _, factory = spade_demo
        with pytest.raises(ValueError):
            ppo_finetune(GaussianPolicy(10, 7), None, factory, PPOConfig(iters=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PPOConfig(gamma=1.5)


def adr(**kw):
    kw = {"delta": 0.05, "window": 4, **kw}
    return AdrState.create({"goal.x": (-0.15, 0.15), "goal.y": (-0.15, 0.15)}, **kw)


class TestADR:
    def test_expand_by_delta(self):
        a = adr()
        for _ in range(4):
            a = adr_update(a, True)
        assert a.ranges["goal.x"] == (-0.05, 0.05) and a.history == ()

    def test_clamped_at_target(self):
        a = adr()
        for _ in range(40):
            a = adr_update(a, True)
        assert a.at_target()
        assert a.ranges["goal.y"] == (-0.15, 0.15)

    def test_dead_zone(self):
        a = adr()
        for i in range(12):
            a = adr_update(a, i % 2 == 0)
        assert a.ranges["goal.x"] == (0.0, 0.0)

    def test_shrink_to_initial(self):
        a = adr()
        for _ in range(8):
            a = adr_update(a, True)
        for _ in range(4):
            a = adr_update(a, False)
        assert a.ranges["goal.x"] == pytest.approx((-0.05, 0.05))
        for _ in range(40):
            a = adr_update(a, False)
        assert a.ranges["goal.x"] == (0.0, 0.0)

    @given(st.lists(st.booleans(), max_size=200))
    def test_ranges_within_bounds(self, outcomes):
        a = adr()
        widths = []
        for o in outcomes:
            a = adr_update(a, o)
            lo, hi = a.ranges["goal.x"]
            assert -0.15 - 1e-12 <= lo <= 0.0 <= hi <= 0.15 + 1e-12
            widths.append(hi - lo)
        if all(outcomes):
            assert widths == sorted(widths)

    def test_validation(self):
        with pytest.raises(ValueError):
            adr(window=0)
        with pytest.raises(ValueError):
            AdrState.create({"goal.w": (-1, 1)})

    def test_offsets_in_range(self):
        a = adr()
        for _ in range(8):
            a = adr_update(a, True)
        r = np.random.default_rng(0)
        for _ in range(100):
            off = a.sample_offsets(r)["goal"]
            assert -0.1 <= off[0] <= 0.1 and -0.1 <= off[1] <= 0.1 and off[2] == 0.0


class TestEvaluate:
    def test_zero_policy_fails(self, spade_demo):
        _, _, factory = spade_demo
        env = factory()
        m = evaluate_policy(zero_policy(env.state_dim, env.action_dim), factory, episodes=2)
        assert m["success_rate"] == 0.0 and m["mean_goal_return"] == 0.0 and m["violation_rate"] == 0.0

    def test_deterministic(self, spade_demo):
        _, sol, factory = spade_demo
        pol = ReplayPolicy(sol.velocities, factory().config.horizon)
        assert evaluate_policy(pol, factory, episodes=2, seed=5) == evaluate_policy(pol, factory, episodes=2, seed=5)

    def test_trace_replay_oracle(self, spade_demo, tmp_path):
        fx, sol, factory = spade_demo
        H = fx.env.horizon
        pol = ReplayPolicy(sol.velocities, H)
        m = evaluate_policy(pol, factory, episodes=3, seed=2)
        flags = []
        for e in range(3):
            env = factory()
            run_episode(env, pol, episode_seed(2, 0, e))
            env.trace.dump(tmp_path / f"{e}.csv")
            flags.append(success(EpisodeTrace.load(tmp_path / f"{e}.csv", "spade", H, fx.env.control_dt)))
        assert m["success_rate"] == np.mean(flags)
        assert m["successes"] == flags and any(flags)

    def test_episodes_validated(self, spade_demo):
        with pytest.raises(ValueError):
            evaluate_policy(GaussianPolicy(15, 7), spade_demo[2], episodes=0)


class TestFiles:
    def test_checkpoint_round_trip(self, tmp_path):
        pol = GaussianPolicy(15, 7, log_std=-1.0, seed=4)
        pol.set_normalizer(np.arange(15.0), np.linspace(0.5, 2, 15))
        save_checkpoint(pol, tmp_path / "p.tlp")
        back = load_checkpoint(tmp_path / "p.tlp")
        assert checkpoint_bytes(back) == checkpoint_bytes(pol)
        x = np.random.default_rng(0).normal(size=(3, 15))
        assert np.array_equal(back.mean(x), pol.mean(x))
        val = ValueNet(15, seed=1)
        save_checkpoint(val, tmp_path / "v.tlp")
        assert isinstance(load_checkpoint(tmp_path / "v.tlp"), ValueNet)

    def test_checkpoint_corruption(self, tmp_path):
        data = checkpoint_bytes(GaussianPolicy(3, 2))
        (tmp_path / "t.tlp").write_bytes(data[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(tmp_path / "t.tlp")
        (tmp_path / "x.tlp").write_bytes(data + b"\0" * 8)
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(tmp_path / "x.tlp")
        (tmp_path / "m.tlp").write_bytes(b"NOTAPOLICY")
        with pytest.raises(ValueError, match="not a policy"):
            load_checkpoint(tmp_path / "m.tlp")

    def test_curve_round_trip(self, tmp_path):
        rows = [{"iteration": i, "env_steps": 960 * (i + 1), "mean_return": 0.1 * i, "mean_goal_return": 1.0 / 3,
                 "success_rate": 0.5, "eval_goal_return": 2.0, "eval_success_rate": 1.0,
                 "adr_ranges": {"goal.x": (-0.02 * i, 0.02 * i)}} for i in range(3)]
        write_curve(rows, tmp_path / "c.csv")
        back = read_curve(tmp_path / "c.csv")
        assert back == rows
