import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from toolimit.envsim.robot import RobotEnv
from toolimit.fixtures import spade_fixture
from toolimit.geometry import matrix_to_quat, quat_geodesic_distance, quat_to_matrix
from toolimit.kinematics import BaseMount, ToolPose, forward_kinematics, load_chain, tool_transform
from toolimit.trajopt import (BaseRegion, BaseSearch, TrackingProblem, TrackingSolution, TrackingWeights,
                              base_grid, inverse_kinematics, load_solution, rollout_demo, save_solution,
                              solve_velocities, solve_with_base, stage_cost)


def joint_path(chain, T, seed=0):
    """Smooth joint path starting at the mid configuration."""
    r = np.random.default_rng(seed)
    s = np.linspace(0, 1, T + 1)[:, None]
    amp = r.uniform(-0.8, 0.8, chain.dof)
    return chain.mid_configuration() + amp * np.sin(math.pi * s) * s


def fk_problem(chain, qs, base=BaseMount(), dt=0.05, **kw):
    T = np.array([tool_transform(chain, base, q) for q in qs])
    return TrackingProblem(chain, T[:, :3, 3], T[:, :3, :3], dt, q0=qs[0].copy(), **kw)


def oracle_cost(chain, base, q, v, target, w):
    T = tool_transform(chain, base, q)
    d = quat_geodesic_distance(matrix_to_quat(T[:3, :3]), target.orientation)
    hinge = np.maximum(q - chain.upper, 0) ** 2 + np.maximum(chain.lower - q, 0) ** 2
    return (float(np.sum((T[:3, 3] - target.position) ** 2)) + w.w_R * d ** 2 + w.w_v * float(v @ v)
            + w.w_b * float(hinge.sum()))


class TestStageCost:
    def test_zero_at_target(self, panda):
        q = panda.mid_configuration()
        target = forward_kinematics(panda, BaseMount(), q)
        c, gq, gv, _, _ = stage_cost(panda, BaseMount(), q, np.zeros(7), target)
        # the target orientation went through a quaternion, so zero is up to rounding
        assert c < 1e-12
        assert np.allclose(gq, 0, atol=1e-7) and not gv.any()

    def test_velocity_term(self, panda):
        q = panda.mid_configuration()
        v = np.zeros(7)
        v[0] = 1.0
        target = forward_kinematics(panda, BaseMount(), q)
        c = stage_cost(panda, BaseMount(), q, v, target, TrackingWeights(w_v=2.0))[0]
        assert c == pytest.approx(2.0, abs=1e-12)

    def test_shape_check(self, panda):
        with pytest.raises(ValueError):
            stage_cost(panda, BaseMount(), np.zeros(6), np.zeros(7), ToolPose(np.zeros(3), [1, 0, 0, 0]))

    @pytest.mark.parametrize("name", ["panda", "ur5", "talos_arm11", "planar3"])
    def test_matches_oracle(self, name, rng):
        chain = load_chain(name)
        w = TrackingWeights(w_v=0.3, w_b=50.0, w_R=0.7)
        for _ in range(50):
            q = rng.uniform(chain.lower - 0.2, chain.upper + 0.2)
            v = rng.normal(size=chain.dof)
            target = forward_kinematics(chain, BaseMount(), rng.uniform(chain.lower, chain.upper))
            base = BaseMount(*rng.uniform(-0.5, 0.5, 2), rng.uniform(-3, 3))
            c = stage_cost(chain, base, q, v, target, w)[0]
            assert abs(c - oracle_cost(chain, base, q, v, target, w)) < 1e-10

    @pytest.mark.parametrize("name", ["panda", "ur5", "talos_arm11", "planar3"])
    def test_gradient_fd(self, name, rng):
        """Relative error below 1e-5 at 100 random points."""
        chain = load_chain(name)
        w = TrackingWeights(w_v=0.3, w_b=50.0, w_R=0.7)
        n = chain.dof
        h = 1e-6
        worst = 0.0
        for _ in range(100):
            q = rng.uniform(chain.lower - 0.2, chain.upper + 0.2)
            v = rng.normal(size=n)
            # keep the orientation error well below pi where the angle is smooth
            target = forward_kinematics(chain, BaseMount(), q + rng.normal(scale=0.3, size=n))
            _, gq, gv, _, _ = stage_cost(chain, BaseMount(), q, v, target, w)
            g = np.concatenate([gq, gv])
            x = np.concatenate([q, v])
            f = lambda z: stage_cost(chain, BaseMount(), z[:n], z[n:], target, w)[0]
            gn = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(2 * n)])
            worst = max(worst, np.linalg.norm(g - gn) / max(np.linalg.norm(gn), 1e-3))
        assert worst < 1e-5

    def test_gauss_newton_blocks(self, planar3, rng):
        q = rng.uniform(planar3.lower, planar3.upper)
        _, _, _, Hqq, Hvv = stage_cost(planar3, BaseMount(), q, np.zeros(3), forward_kinematics(
            planar3, BaseMount(), q + 0.1), TrackingWeights(w_v=0.5))
        np.testing.assert_array_equal(Hqq, Hqq.T)
        assert np.all(np.linalg.eigvalsh(Hqq) > -1e-12)
        np.testing.assert_array_equal(Hvv, np.eye(3))


class TestSolveVelocities:
    def test_already_at_target(self, panda):
        qs = np.tile(panda.mid_configuration(), (11, 1))
        sol = solve_velocities(fk_problem(panda, qs), BaseMount())
        assert np.abs(sol.velocities).max() < 1e-6 and sol.cost < 1e-12

    def test_planar_tracking(self, planar3):
        qs = joint_path(planar3, 40)
        prob = fk_problem(planar3, qs)
        sol = solve_velocities(prob, BaseMount())
        assert sol.tracking_errors(prob)["mean_position"] < 1e-2
        assert np.all(np.diff(sol.cost_trace) <= 0)
        assert sol.status == "converged"

    def test_dynamics_identity_exact(self, panda):
        prob = fk_problem(panda, joint_path(panda, 20, seed=3))
        sol = solve_velocities(prob, BaseMount(0.1, 0.0, 0.2))
        for t in range(prob.T):
            assert np.array_equal(sol.states[t + 1], sol.states[t] + sol.velocities[t] * prob.dt)

    def test_not_worse_than_zero_velocity(self, ur5):
        prob = fk_problem(ur5, joint_path(ur5, 20, seed=5), base=BaseMount(0.2, 0.1, 0.5))
        sol = solve_velocities(prob, BaseMount())
        assert sol.cost <= sol.cost_trace[0]
        assert np.all(np.diff(sol.cost_trace) <= 0)

    def test_velocity_weight_shrinks_controls(self, planar3):
        qs = joint_path(planar3, 30, seed=1)
        norms = []
        for w_v in (1e-3, 1e0, 1e3):
            sol = solve_velocities(fk_problem(planar3, qs, weights=TrackingWeights(w_v=w_v)), BaseMount())
            norms.append(np.linalg.norm(sol.velocities))
        assert norms[0] > norms[1] > norms[2]
        assert norms[2] < 0.05 * norms[0]

    def test_non_finite_target(self, planar3):
        qs = joint_path(planar3, 5)
        prob = fk_problem(planar3, qs)
        prob.targets_pos[2, 0] = np.nan
        with pytest.raises(RuntimeError, match="iteration"):
            solve_velocities(prob, BaseMount())

    @pytest.mark.parametrize("kw", [dict(dt=0.0), dict(T=0)])
    def test_problem_validation(self, planar3, kw):
        qs = joint_path(planar3, kw.get("T", 5))
        with pytest.raises(ValueError):
            fk_problem(planar3, qs, dt=kw.get("dt", 0.05))

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            TrackingWeights(w_v=-1.0)


class TestBaseSearch:
    def test_grid_nodes(self):
        nodes = base_grid(BaseRegion(), (5, 5, 4))
        assert len(nodes) == 100
        yaws = sorted({n[2] for n in nodes})
        np.testing.assert_allclose(yaws, [-math.pi, -math.pi / 2, 0, math.pi / 2])

    def test_collapsed_region(self, planar3):
        prob = fk_problem(planar3, joint_path(planar3, 20, seed=2), base=BaseMount(0.2, -0.1, 0.3))
        prob.region = BaseRegion((0.1, 0.1), (-0.2, -0.2), (0.25, 0.25))
        assert len(base_grid(prob.region)) == 1
        got = solve_with_base(prob)
        ref = solve_velocities(prob, BaseMount(0.1, -0.2, 0.25))
        assert (got.base.x, got.base.y, got.base.yaw) == (0.1, -0.2, 0.25)
        # the search splits the same iLQR run into a warm-started continuation
        assert got.cost <= ref.cost + 1e-12
        assert got.cost == pytest.approx(ref.cost, rel=1e-4)

    def test_finer_grid_never_worse(self, planar3):
        prob = fk_problem(planar3, joint_path(planar3, 20, seed=4), base=BaseMount(0.3, 0.35, 1.0))
        prob.region = BaseRegion((-0.5, 0.5), (-0.5, 0.5))
        # 3 -> 5 nodes per axis and 2 -> 4 yaw nodes nest exactly
        coarse = solve_with_base(prob, BaseSearch(grid=(3, 3, 2), cem_iters=0))
        fine = solve_with_base(prob, BaseSearch(grid=(5, 5, 4), cem_iters=0))
        assert fine.cost <= coarse.cost

    def test_reachable_pocket(self, planar3):
        """With q0 fixed, only the true base puts the first target within reach at zero cost."""
        truth = BaseMount(0.55, -0.3, 0.9)
        prob = fk_problem(planar3, joint_path(planar3, 20, seed=6), base=truth)
        prob.region = BaseRegion((-1, 1), (-1, 1))
        sol = solve_with_base(prob, BaseSearch(seed=1))
        assert abs(sol.base.x - truth.x) <= 0.5 and abs(sol.base.y - truth.y) <= 0.5
        assert abs(math.remainder(sol.base.yaw - truth.yaw, 2 * math.pi)) <= math.pi / 2
        assert np.all(np.diff(sol.cost_trace) <= 0)
        assert sol.tracking_errors(prob)["mean_position"] < 1e-2

    def test_deterministic(self, planar3):
        prob = fk_problem(planar3, joint_path(planar3, 10, seed=8), base=BaseMount(0.1, 0.2, -0.5))
        search = BaseSearch(grid=(3, 3, 2), cem_iters=3, seed=5)
        a, b = solve_with_base(prob, search), solve_with_base(prob, search)
        assert a.base == b.base and np.array_equal(a.velocities, b.velocities)


class TestInverseKinematics:
    @given(seed=st.integers(0, 2**31))
    def test_recovers_reachable_pose(self, planar3, seed):
        r = np.random.default_rng(seed)
        q = planar3.mid_configuration() + r.uniform(-1, 1, 3)
        T = tool_transform(planar3, BaseMount(), q)
        got = inverse_kinematics(planar3, BaseMount(), T[:3, 3], T[:3, :3], q_init=q + r.normal(scale=0.1, size=3))
        np.testing.assert_allclose(tool_transform(planar3, BaseMount(), got), T, atol=1e-6)


@pytest.fixture(scope="module")
def ur5():
    return load_chain("ur5")


def handmade_solution(chain, base, H, dt, seed=0):
    r = np.random.default_rng(seed)
    V = r.uniform(-0.5, 0.5, (H, chain.dof)) * chain.velocity_limits
    X = np.empty((H + 1, chain.dof))
    X[0] = chain.mid_configuration()
    for t in range(H):
        X[t + 1] = X[t] + V[t] * dt
    return TrackingSolution(base, V, X, dt, [1.0])


@pytest.fixture(scope="module")
def setup(panda):
    fx = spade_fixture()
    base = BaseMount(0.3, 0.0, 0.1)
    sol = handmade_solution(panda, base, fx.env.horizon, fx.env.control_dt)
    env = RobotEnv(fx.env, fx.params, panda, base, sol.states[0])
    return env, sol


class TestRolloutDemo:
    def test_pairs(self, setup, panda):
        env, sol = setup
        S, A, total, trace = rollout_demo(env, sol, seed=0)
        assert S.shape == (sol.velocities.shape[0], 15)
        assert np.array_equal(A, sol.velocities[: len(A)])
        for t in range(len(S)):
            T = tool_transform(panda, sol.base, S[t, 7:14])
            np.testing.assert_allclose(S[t, :3], T[:3, 3], atol=1e-12)
            np.testing.assert_allclose(quat_to_matrix(S[t, 3:7]), T[:3, :3], atol=1e-12)
            np.testing.assert_allclose(S[t, 7:14], sol.states[t], atol=1e-12)
        assert total == sum(trace.goal_rewards)

    def test_mismatch(self, setup):
        env, sol = setup
        moved = TrackingSolution(BaseMount(0.0, 0.0, 0.1), sol.velocities, sol.states, sol.dt, sol.cost_trace)
        with pytest.raises(ValueError):
            rollout_demo(env, moved)
        short = TrackingSolution(sol.base, sol.velocities[:10], sol.states[:11], sol.dt, sol.cost_trace)
        with pytest.raises(ValueError):
            rollout_demo(env, short)


class TestSolutionFile:
    def test_round_trip(self, panda, tmp_path):
        sol = handmade_solution(panda, BaseMount(0.1, -0.2, 0.3, 0.05), 12, 1 / 24, seed=2)
        sol.cost_trace = [3.0, 2.5, 1.0 / 3.0]
        sol.status = "iteration limit"
        save_solution(sol, tmp_path / "s.txt")
        back = load_solution(tmp_path / "s.txt")
        assert back.base == sol.base and back.dt == sol.dt and back.status == sol.status
        assert back.cost_trace == sol.cost_trace
        assert np.array_equal(back.states, sol.states) and np.array_equal(back.velocities, sol.velocities)

    def test_bad_record(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("base 0 0 0 0\ndt 0.1\nw 0 1 2\n")
        with pytest.raises(ValueError, match="line 3"):
            load_solution(p)
