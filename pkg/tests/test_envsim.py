import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from toolimit.envsim.core import (EnvConfig, EpisodeTrace, StepOutcome, hammer_dense_reward,
                                  scythe_dense_reward, spade_dense_reward, success)
from toolimit.envsim.robot import RobotEnv, velocity_penalty
from toolimit.envsim.tasks import SceneError, make_env, pose_stack
from toolimit.fixtures import hammer_fixture, scythe_fixture, spade_fixture
from toolimit.geometry import quat_from_axis_angle, quat_to_matrix, rot_z
from toolimit.kinematics import BaseMount, ToolPose, load_chain
from toolimit.scene import SceneParams
from toolimit.trajectory import apply_alignment, extract_keypoints


def fixture_poses(fx):
    return pose_stack(apply_alignment(fx.trajectory, fx.params.transform, extract_keypoints(fx.trajectory)))


def replay(fx, poses=None, seed=0):
    env = make_env(fx.env, fx.params)
    T = fixture_poses(fx) if poses is None else poses
    env.reset(seed, T[0])
    outs = []
    for k in range(1, len(T)):
        outs.append(env.step_tool(T[k]))
        if outs[-1].done:
            break
    return env, outs


def slowed(T, factor):
    """Same path traversed ``factor`` times slower; translations interpolated linearly."""
    s = np.minimum(np.arange(len(T)) / factor, len(T) - 1)
    lo = np.floor(s).astype(int)
    hi = np.minimum(lo + 1, len(T) - 1)
    out = T[np.rint(s).astype(int)].copy()
    w = (s - lo)[:, None]
    out[:, :3, 3] = (1 - w) * T[lo, :3, 3] + w * T[hi, :3, 3]
    return out


@pytest.fixture(scope="module")
def spade():
    return spade_fixture()


@pytest.fixture(scope="module")
def hammer():
    return hammer_fixture()


@pytest.fixture(scope="module")
def scythe():
    return scythe_fixture()


class TestReset:
    def test_spade_spheres_in_deposit(self, spade):
        env = make_env(spade.env, spade.params)
        st_ = env.reset(0)
        assert st_.sphere_pos.shape == (20, 3)
        local = st_.sphere_pos - spade.params.object_positions["deposit"]
        assert np.all(np.abs(local[:, 0]) < 0.5 * spade.env.deposit[0])
        assert np.all(np.abs(local[:, 1]) < 0.5 * spade.env.deposit[1])

    def test_hammer_nail_out(self, hammer):
        assert make_env(hammer.env, hammer.params).reset(0).nail_depth == 0.1

    def test_scythe_deterministic(self, scythe):
        a = make_env(scythe.env, scythe.params).reset(5).grass_xy
        b = make_env(scythe.env, scythe.params).reset(5).grass_xy
        assert np.array_equal(a, b)
        half = 0.5 * np.asarray(scythe.env.patch)
        assert np.all(np.abs(a - scythe.params.object_positions["grass"][:2]) <= half)

    def test_missing_object(self, spade):
        with pytest.raises(SceneError):
            make_env(spade.env, SceneParams({"deposit": [0, 0, 0]}))

    def test_config_validation(self):
        for kw in (dict(kind="shovel"), dict(control_dt=0.0), dict(substeps=0), dict(horizon=0)):
            with pytest.raises(ValueError):
                EnvConfig(**kw)


class TestStep:
    def test_spade_reward_counts_new_deliveries(self, spade):
        env, outs = replay(spade)
        delivered = [o.info["delivered"] for o in outs]
        increments = np.diff([0] + delivered)
        assert [o.goal_reward for o in outs] == list(increments)
        assert sum(o.goal_reward for o in outs) == delivered[-1] > 0
        assert max(o.info["penetration"] for o in outs) < spade.env.sphere_radius / 10
        assert env.state.sphere_pos.shape[0] == spade.env.spheres

    def test_compiled_rollout_matches_steps(self, spade, hammer, scythe):
        for fx in (spade, hammer, scythe):
            _, outs = replay(fx, seed=3)
            env = make_env(fx.env, fx.params)
            assert env.goal_return(fixture_poses(fx), seed=3) == sum(o.goal_reward for o in outs)

    def test_hammer_reward_is_plant_indicator(self, hammer):
        _, outs = replay(hammer)
        depth = [o.info["nail_depth"] for o in outs]
        assert all(0.0 <= d <= 0.1 for d in depth)
        assert np.all(np.diff(depth) <= 0)
        assert [o.goal_reward for o in outs] == [1.0 if d < 0.001 else 0.0 for d in depth]
        assert outs[-1].goal_reward == 1.0 and outs[-1].done

    def test_hammer_slow_strike_does_nothing(self, hammer):
        _, outs = replay(hammer, slowed(fixture_poses(hammer), 20))
        assert all(o.info["nail_depth"] == 0.1 for o in outs)

    def test_scythe_cuts(self, scythe):
        _, outs = replay(scythe)
        cut = [o.info["cut"] for o in outs]
        assert np.all(np.diff(cut) >= 0)
        assert sum(o.goal_reward for o in outs) == cut[-1] == scythe.env.grass_count

    def test_scythe_slow_blade_cuts_nothing(self, scythe):
        _, outs = replay(scythe, slowed(fixture_poses(scythe), 4))
        assert sum(o.goal_reward for o in outs) == 0

    def test_deterministic(self, spade):
        _, a = replay(spade, seed=9)
        _, b = replay(spade, seed=9)
        assert [(o.goal_reward, o.dense_reward, o.info) for o in a] == [(o.goal_reward, o.dense_reward, o.info)
                                                                        for o in b]

    def test_done_at_horizon_and_errors(self, spade):
        env = make_env(spade.env, spade.params)
        env.reset(0, np.eye(4))
        with pytest.raises(ValueError):
            env.step_tool(np.full((4, 4), np.nan))
        for _ in range(spade.env.horizon):
            out = env.step_tool(np.eye(4))
        assert out.done
        with pytest.raises(RuntimeError):
            env.step_tool(np.eye(4))

    def test_dense_bounds(self, spade, hammer, scythe):
        for fx, cap in ((spade, 2), (hammer, 1), (scythe, 2)):
            _, outs = replay(fx)
            H = fx.env.horizon
            assert all(0 <= o.dense_reward <= cap / H + 1e-15 for o in outs)


def oracle_dense(kind, t, tip, H, b=5.0, **kw):
    e = lambda d: math.exp(-(b / 2) * d)
    if kind == "spade":
        K = len(kw["spheres"])
        return (1 / H) * e(math.dist(tip, kw["deposit"])) + sum(
            (1 / (H * K)) * e(math.dist(kw["goal"], x)) for x in kw["spheres"])
    if kind == "hammer":
        return (1 / H) * e(math.dist(tip, kw["nail"]))
    qa, qr = kw["q"], kw["qr"]
    dI = 2 * math.acos(min(1.0, abs(sum(x * y for x, y in zip(qa, qr)))))
    first = (1 / H) * e(math.dist(tip, kw["pa"])) if t < H / 2 else 0.0
    second = (1 / H) * e(math.dist(tip, kw["pb"])) if t >= H / 2 else 0.0
    return first + second + (1 / H) * e(dI)


class TestDense:
    def test_hammer_at_nail(self):
        assert hammer_dense_reward([0.1, 0.2, 0.3], np.array([0.1, 0.2, 0.3]), 5.0, 120) == 1 / 120

    def test_spade_saturated(self):
        goal = np.array([1.0, 0.0, 0.2])
        r = spade_dense_reward([0, 0, 0], np.zeros(3), goal, np.tile(goal, (20, 1)), 5.0, 120)
        assert r == pytest.approx(2 / 120, abs=1e-15)

    @given(st.integers(0, 2**31), st.integers(0, 119))
    def test_formula_oracle(self, seed, t):
        r = np.random.default_rng(seed)
        tip, dep, goal, nail, a, b = r.normal(size=(6, 3))
        spheres = r.normal(size=(20, 3))
        q = r.normal(size=4)
        q /= np.linalg.norm(q)
        qr = r.normal(size=4)
        qr /= np.linalg.norm(qr)
        H = 120
        assert abs(spade_dense_reward(tip, dep, goal, spheres, 5.0, H)
                   - oracle_dense("spade", t, tip, H, deposit=dep, goal=goal, spheres=spheres)) < 1e-12
        assert abs(hammer_dense_reward(tip, nail, 5.0, H) - oracle_dense("hammer", t, tip, H, nail=nail)) < 1e-12
        assert abs(scythe_dense_reward(t, tip, q, a, b, qr, 5.0, H)
                   - oracle_dense("scythe", t, tip, H, pa=a, pb=b, q=q, qr=qr)) < 1e-12


def synthetic_trace(kind, key, values, H=120, extra=None):
    tr = EpisodeTrace(kind, H, 1 / 24)
    for i, v in enumerate(values):
        info = {key: v}
        if extra:
            info.update(extra)
        tr.record(ToolPose(np.zeros(3), np.array([1.0, 0, 0, 0])), StepOutcome(0.0, 0.0, False, info))
    return tr


class TestSuccess:
    @pytest.mark.parametrize("steps, expected", [(60, True), (59, False)])
    def test_spade_half_episode(self, steps, expected):
        vals = [10] * steps + [3] * (120 - steps)
        assert success(synthetic_trace("spade", "in_box", vals)) is expected

    @pytest.mark.parametrize("first, expected", [(30, False), (24, True), (25, False)])
    def test_hammer_first_second(self, first, expected):
        vals = [0.05] * (first - 1) + [0.0005]
        assert success(synthetic_trace("hammer", "nail_depth", vals)) is expected

    @pytest.mark.parametrize("last, expected", [(24, True), (25, False)])
    def test_scythe_first_second(self, last, expected):
        vals = [8] * (last - 1) + [16] * (120 - last + 1)
        assert success(synthetic_trace("scythe", "cut", vals, extra={"total": 16})) is expected

    def test_trace_dump_round_trip(self, hammer, tmp_path):
        env = make_env(hammer.env, hammer.params)
        trace = env.run(fixture_poses(hammer))
        trace.dump(tmp_path / "t.csv")
        back = EpisodeTrace.load(tmp_path / "t.csv", "hammer", hammer.env.horizon, hammer.env.control_dt)
        assert back.goal_rewards == trace.goal_rewards
        assert back.counters == trace.counters
        assert success(back) == success(trace) is True


class TestRobotEnv:
    @given(st.integers(0, 2**31))
    def test_velocity_penalty(self, seed):
        r = np.random.default_rng(seed)
        lim = r.uniform(0.5, 2.0, 7)
        inside = r.uniform(-1, 1, 7) * lim
        assert velocity_penalty(inside, lim) == 0.0
        outside = inside.copy()
        outside[r.integers(7)] = 1.01 * lim[0] + 2.0
        assert velocity_penalty(outside, lim) > 0.0

    def test_state_layout(self, spade):
        chain = load_chain("panda")
        q0 = chain.mid_configuration()
        env = RobotEnv(spade.env, spade.params, chain, BaseMount(0.2, -0.1, 0.3), q0)
        s = env.reset(0)
        assert env.state_dim == s.shape[0] == 15
        T = env.tool_T(q0)
        np.testing.assert_allclose(s[:3], T[:3, 3], atol=1e-12)
        np.testing.assert_allclose(quat_to_matrix(s[3:7]), T[:3, :3], atol=1e-12)
        np.testing.assert_array_equal(s[7:14], q0)
        assert s[14] == 0.0
        v = np.zeros(7)
        v[0] = 10.0
        s1, r, done, info = env.step(v)
        assert info["violation"] and info["penalty"] > 0 and r == info["goal_reward"] - info["penalty"]
        assert s1[14] == pytest.approx(1 / 120)

    def test_yawed_box_is_rotated(self):
        fx = spade_fixture()
        params = SceneParams(fx.params.object_positions, {"goal": 0.5}, fx.params.transform)
        env = make_env(fx.env, params)
        np.testing.assert_allclose(env.goal_R, rot_z(0.5), atol=1e-15)
        assert quat_from_axis_angle([0, 0, 1], 0.5)[0] > 0
