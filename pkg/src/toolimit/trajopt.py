"""Base placement and joint-velocity tracking of target tool poses.

Dynamics are a single integrator, ``q[t+1] = q[t] + velocities[t] * dt``,
so ``velocities[t]`` is the command applied at state ``t``. The total cost is

    sum_{t=0..T} [ |pos(q_t) - p_t|^2 + w_R * angle(R(q_t), R_t)^2 + w_b * barrier(q_t) ]
        + sum_{t=0..T-1} w_v * |v_t|^2

and is minimized by iLQR (Gauss-Newton value expansion, Levenberg-style
regularization, backtracking line search). The base mount is chosen by an
outer grid search followed by cross-entropy refinement.

Solution files are plain text::

    # toolimit tracking solution
    base X Y YAW Z
    dt DT
    cost C0 C1 ...
    q <t> q_0 ... q_N-1          (T+1 rows)
    v <t> v_0 ... v_N-1          (T rows)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .geometry import quat_geodesic_distance, quat_to_matrix
from .kinematics import (BaseMount, KinematicChain, ToolPose, fk_jac_kernel, forward_kinematics)


class SolverError(RuntimeError):
    """The optimizer hit a non-finite cost."""


@dataclass
class TrackingWeights:
    w_v: float = 1e-3
    w_b: float = 1e2
    w_R: float = 0.1

    def __post_init__(self):
        if min(self.w_v, self.w_b, self.w_R) < 0:
            raise ValueError("weights must be nonnegative")


@dataclass
class BaseRegion:
    x: tuple = (-1.0, 1.0)
    y: tuple = (-1.0, 1.0)
    yaw: tuple = (-math.pi, math.pi)
    z: float = 0.0

    def __post_init__(self):
        for lo, hi in (self.x, self.y, self.yaw):
            if hi < lo:
                raise ValueError("base region bounds must satisfy lo <= hi")

    @property
    def periodic_yaw(self) -> bool:
        return self.yaw[1] - self.yaw[0] >= 2 * math.pi - 1e-12


@dataclass
class TrackingProblem:
    chain: KinematicChain
    targets_pos: np.ndarray
    targets_rot: np.ndarray
    dt: float
    q0: object = "mid"
    weights: TrackingWeights = field(default_factory=TrackingWeights)
    region: BaseRegion = field(default_factory=BaseRegion)

    def __post_init__(self):
        self.targets_pos = np.ascontiguousarray(self.targets_pos, dtype=float)
        self.targets_rot = np.ascontiguousarray(self.targets_rot, dtype=float)
        if self.targets_pos.ndim != 2 or self.targets_pos.shape[1] != 3 or self.targets_pos.shape[0] < 2:
            raise ValueError("targets must hold at least 2 poses (T >= 1)")
        if self.targets_rot.shape != (self.targets_pos.shape[0], 3, 3):
            raise ValueError("one rotation per target position is required")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def from_poses(cls, chain, poses, dt, **kw):
        if hasattr(poses, "positions"):
            return cls(chain, poses.positions, poses.rotations, dt, **kw)
        pos = np.array([p.position for p in poses])
        rot = np.array([quat_to_matrix(p.orientation) for p in poses])
        return cls(chain, pos, rot, dt, **kw)

    @property
    def T(self) -> int:
        return self.targets_pos.shape[0] - 1

    def target(self, t: int) -> ToolPose:
        from .geometry import matrix_to_quat
        return ToolPose(self.targets_pos[t].copy(), matrix_to_quat(self.targets_rot[t]))

    def initial_q(self, base: BaseMount) -> np.ndarray:
        if isinstance(self.q0, str):
            if self.q0 == "mid":
                return self.chain.mid_configuration()
            if self.q0 == "ik":
                return inverse_kinematics(self.chain, base, self.targets_pos[0], self.targets_rot[0],
                                          self.weights.w_R)
            raise ValueError(f"unknown q0 mode {self.q0!r}")
        q0 = np.asarray(self.q0, dtype=float)
        if q0.shape != (self.chain.dof,):
            raise ValueError("q0 does not match the chain's dof")
        return q0


@dataclass
class TrackingSolution:
    base: BaseMount
    velocities: np.ndarray
    states: np.ndarray
    dt: float
    cost_trace: list
    status: str = "converged"

    @property
    def cost(self) -> float:
        return float(self.cost_trace[-1])

    def tracking_errors(self, problem: TrackingProblem) -> dict:
        pos_err, rot_err = [], []
        for t in range(self.states.shape[0]):
            pose = forward_kinematics(problem.chain, self.base, self.states[t])
            tgt = problem.target(t)
            pos_err.append(float(np.linalg.norm(pose.position - tgt.position)))
            rot_err.append(quat_geodesic_distance(pose.orientation, tgt.orientation))
        return {"mean_position": float(np.mean(pos_err)), "max_position": float(np.max(pos_err)),
                "mean_orientation": float(np.mean(rot_err)), "max_orientation": float(np.max(rot_err))}


# -- compiled pieces -----------------------------------------------------------

@njit(cache=True)
def _rot_log(R):
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    w = 0.5 * math.sqrt(max(0.0, 1.0 + tr))
    x = 0.5 * math.sqrt(max(0.0, 1.0 + R[0, 0] - R[1, 1] - R[2, 2]))
    y = 0.5 * math.sqrt(max(0.0, 1.0 - R[0, 0] + R[1, 1] - R[2, 2]))
    z = 0.5 * math.sqrt(max(0.0, 1.0 - R[0, 0] - R[1, 1] + R[2, 2]))
    # recover signs relative to the largest component
    if w >= x and w >= y and w >= z:
        x = math.copysign(x, R[2, 1] - R[1, 2])
        y = math.copysign(y, R[0, 2] - R[2, 0])
        z = math.copysign(z, R[1, 0] - R[0, 1])
    elif x >= y and x >= z:
        w = math.copysign(w, R[2, 1] - R[1, 2])
        y = math.copysign(y, R[0, 1] + R[1, 0])
        z = math.copysign(z, R[0, 2] + R[2, 0])
    elif y >= z:
        w = math.copysign(w, R[0, 2] - R[2, 0])
        x = math.copysign(x, R[0, 1] + R[1, 0])
        z = math.copysign(z, R[1, 2] + R[2, 1])
    else:
        w = math.copysign(w, R[1, 0] - R[0, 1])
        x = math.copysign(x, R[0, 2] + R[2, 0])
        y = math.copysign(y, R[1, 2] + R[2, 1])
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    s = math.sqrt(x * x + y * y + z * z)
    out = np.zeros(3)
    if s < 1e-300:
        return out
    angle = 2.0 * math.atan2(s, w)
    out[0] = x / s * angle
    out[1] = y / s * angle
    out[2] = z / s * angle
    return out


@njit(cache=True)
def _state_cost(origins, axes, kinds, mount, base, q, tpos, tR, wR, wb, lower, upper,
                T, J, grad, hess, want_derivs):
    """Pose + barrier cost of one state; fills gradient and Gauss-Newton Hessian when asked."""
    n = q.shape[0]
    fk_jac_kernel(origins, axes, kinds, mount, base, q, T, J)
    ep = np.empty(3)
    for i in range(3):
        ep[i] = T[i, 3] - tpos[i]
    Rerr = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += T[i, k] * tR[j, k]
            Rerr[i, j] = s
    e = _rot_log(Rerr)
    cost = ep[0] ** 2 + ep[1] ** 2 + ep[2] ** 2 + wR * (e[0] ** 2 + e[1] ** 2 + e[2] ** 2)
    for i in range(n):
        over = q[i] - upper[i]
        under = lower[i] - q[i]
        if over > 0.0:
            cost += wb * over * over
        elif under > 0.0:
            cost += wb * under * under
    if not want_derivs:
        return cost
    for i in range(n):
        g = 0.0
        for k in range(3):
            g += 2.0 * J[k, i] * ep[k] + 2.0 * wR * J[3 + k, i] * e[k]
        over = q[i] - upper[i]
        under = lower[i] - q[i]
        if over > 0.0:
            g += 2.0 * wb * over
        elif under > 0.0:
            g -= 2.0 * wb * under
        grad[i] = g
        for j in range(i, n):
            h = 0.0
            for k in range(3):
                h += 2.0 * J[k, i] * J[k, j] + 2.0 * wR * J[3 + k, i] * J[3 + k, j]
            hess[i, j] = h
            hess[j, i] = h
        if over > 0.0 or under > 0.0:
            hess[i, i] += 2.0 * wb
    return cost


@njit(cache=True)
def _rollout(origins, axes, kinds, mount, base, q0, U, dt, tpos, tR, wv, wR, wb, lower, upper, X):
    steps = U.shape[0]
    n = q0.shape[0]
    T = np.empty((4, 4))
    J = np.empty((6, n))
    dummy_g = np.empty(n)
    dummy_h = np.empty((n, n))
    for i in range(n):
        X[0, i] = q0[i]
    total = 0.0
    for t in range(steps + 1):
        if t > 0:
            for i in range(n):
                X[t, i] = X[t - 1, i] + U[t - 1, i] * dt
        total += _state_cost(origins, axes, kinds, mount, base, X[t], tpos[t], tR[t], wR, wb,
                             lower, upper, T, J, dummy_g, dummy_h, False)
        if t < steps:
            for i in range(n):
                total += wv * U[t, i] * U[t, i]
    return total


@njit(cache=True)
def _cholesky_solve(A, B, out):
    """Solve A X = B for SPD A (n x n), B (n x m). Returns False if A is not positive definite."""
    n = A.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    m = B.shape[1]
    y = np.empty(n)
    for c in range(m):
        for i in range(n):
            s = B[i, c]
            for k in range(i):
                s -= L[i, k] * y[k]
            y[i] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = y[i]
            for k in range(i + 1, n):
                s -= L[k, i] * out[k, c]
            out[i, c] = s / L[i, i]
    return True


@njit(cache=True)
def ilqr_kernel(origins, axes, kinds, mount, base, q0, U, dt, tpos, tR, wv, wR, wb, lower, upper,
                max_iter, tol, trace):
    """iLQR on the single integrator; ``U`` is updated in place.

    Returns:
        (number of recorded costs, status): status 0 converged, 1 iteration
        cap, 2 regularization blow-up, -k non-finite cost at iteration k.
    """
    steps = U.shape[0]
    n = q0.shape[0]
    X = np.empty((steps + 1, n))
    Xn = np.empty((steps + 1, n))
    Un = np.empty((steps, n))
    cost = _rollout(origins, axes, kinds, mount, base, q0, U, dt, tpos, tR, wv, wR, wb, lower, upper, X)
    if not math.isfinite(cost):
        return 0, -1
    trace[0] = cost
    count = 1
    kff = np.zeros((steps, n))
    Kfb = np.zeros((steps, n, n))
    lx = np.empty((steps + 1, n))
    lxx = np.empty((steps + 1, n, n))
    T = np.empty((4, 4))
    J = np.empty((6, n))
    Quu = np.empty((n, n))
    rhs = np.empty((n, n + 1))
    sol = np.empty((n, n + 1))
    Vx = np.empty(n)
    Vxx = np.empty((n, n))
    mu = 1e-6
    status = 1
    for it in range(max_iter):
        for t in range(steps + 1):
            _state_cost(origins, axes, kinds, mount, base, X[t], tpos[t], tR[t], wR, wb, lower, upper,
                        T, J, lx[t], lxx[t], True)
        backward_ok = True
        for i in range(n):
            Vx[i] = lx[steps, i]
            for j in range(n):
                Vxx[i, j] = lxx[steps, i, j]
        for t in range(steps - 1, -1, -1):
            # Q terms with A = I, B = dt I
            for i in range(n):
                for j in range(n):
                    Quu[i, j] = dt * dt * Vxx[i, j]
                    rhs[i, j] = -dt * Vxx[i, j]
                Quu[i, i] += 2.0 * wv + mu
                rhs[i, n] = -(2.0 * wv * U[t, i] + dt * Vx[i])
            if not _cholesky_solve(Quu, rhs, sol):
                backward_ok = False
                break
            for i in range(n):
                kff[t, i] = sol[i, n]
                for j in range(n):
                    Kfb[t, i, j] = sol[i, j]
            # value update: Vx = Qx + Qxu k, Vxx = Qxx + Qxu K (with Quu k = -Qu, Quu K = -Qux)
            newVx = np.empty(n)
            newVxx = np.empty((n, n))
            for i in range(n):
                s = lx[t, i] + Vx[i]
                for j in range(n):
                    s += dt * Vxx[i, j] * kff[t, j]
                newVx[i] = s
                for j in range(n):
                    s2 = lxx[t, i, j] + Vxx[i, j]
                    for k in range(n):
                        s2 += dt * Vxx[i, k] * Kfb[t, k, j]
                    newVxx[i, j] = s2
            for i in range(n):
                Vx[i] = newVx[i]
                for j in range(i, n):
                    v = 0.5 * (newVxx[i, j] + newVxx[j, i])
                    Vxx[i, j] = v
                    Vxx[j, i] = v
        if not backward_ok:
            mu *= 10.0
            if mu > 1e10:
                status = 2
                break
            continue
        alpha = 1.0
        accepted = False
        new_cost = cost
        while alpha > 1e-6:
            for i in range(n):
                Xn[0, i] = q0[i]
            for t in range(steps):
                for i in range(n):
                    du = alpha * kff[t, i]
                    for j in range(n):
                        du += Kfb[t, i, j] * (Xn[t, j] - X[t, j])
                    Un[t, i] = U[t, i] + du
                for i in range(n):
                    Xn[t + 1, i] = Xn[t, i] + Un[t, i] * dt
            new_cost = _rollout(origins, axes, kinds, mount, base, q0, Un, dt, tpos, tR, wv, wR, wb,
                                lower, upper, Xn)
            if not math.isfinite(new_cost):
                return count, -(it + 1)
            if new_cost < cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            mu *= 10.0
            if mu > 1e10:
                status = 2
                break
            continue
        rel = (cost - new_cost) / max(abs(cost), 1e-300)
        for t in range(steps):
            for i in range(n):
                U[t, i] = Un[t, i]
        for t in range(steps + 1):
            for i in range(n):
                X[t, i] = Xn[t, i]
        cost = new_cost
        trace[count] = cost
        count += 1
        mu = max(mu * 0.1, 1e-9)
        if rel < tol:
            status = 0
            break
    return count, status


# -- public API -----------------------------------------------------------------

def stage_cost(chain: KinematicChain, base: BaseMount, q, v, target: ToolPose,
               weights: TrackingWeights | None = None):
    """Cost of one (state, control) pair with derivatives.

    Returns:
        (cost, grad_q, grad_v, hess_qq, hess_vv): the pose Hessian is the
        Gauss-Newton approximation ``2 J^T W J`` plus the barrier diagonal.
    """
    w = weights or TrackingWeights()
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.shape != (chain.dof,) or v.shape != (chain.dof,):
        raise ValueError("q and v must both have length dof")
    n = chain.dof
    T = np.empty((4, 4))
    J = np.empty((6, n))
    g = np.empty(n)
    H = np.empty((n, n))
    c = _state_cost(*chain.packed, base.transform(), q, np.asarray(target.position, dtype=float),
                    quat_to_matrix(target.orientation), w.w_R, w.w_b, chain.lower, chain.upper,
                    T, J, g, H, True)
    c += w.w_v * float(v @ v)
    return c, g, 2.0 * w.w_v * v, H, 2.0 * w.w_v * np.eye(n)


def inverse_kinematics(chain: KinematicChain, base: BaseMount, position, rotation, w_R: float = 0.1,
                       q_init=None, iters: int = 200) -> np.ndarray:
    """Damped least squares on the pose residual plus the limit hinge; best effort."""
    q = chain.mid_configuration() if q_init is None else np.array(q_init, dtype=float)
    n = chain.dof
    T = np.empty((4, 4))
    J = np.empty((6, n))
    g = np.empty(n)
    H = np.empty((n, n))
    packed = chain.packed
    bT = base.transform()
    pos = np.asarray(position, dtype=float)
    rot = np.asarray(rotation, dtype=float)
    lam = 1e-3
    cost = _state_cost(*packed, bT, q, pos, rot, w_R, 1e2, chain.lower, chain.upper, T, J, g, H, True)
    for _ in range(iters):
        step = np.linalg.solve(H + lam * np.eye(n), -g)
        q_new = q + step
        c_new = _state_cost(*packed, bT, q_new, pos, rot, w_R, 1e2, chain.lower, chain.upper,
                            T, J, np.empty(n), np.empty((n, n)), False)
        if c_new < cost:
            q = q_new
            lam = max(lam * 0.3, 1e-9)
            prev, cost = cost, c_new
            cost = _state_cost(*packed, bT, q, pos, rot, w_R, 1e2, chain.lower, chain.upper, T, J, g, H, True)
            if prev - cost < 1e-14:
                break
        else:
            lam *= 10.0
            if lam > 1e8:
                break
    return q


def solve_velocities(problem: TrackingProblem, base: BaseMount, max_iter: int = 200, tol: float = 1e-8,
                     init=None) -> TrackingSolution:
    chain = problem.chain
    q0 = problem.initial_q(base)
    U = np.zeros((problem.T, chain.dof)) if init is None else np.array(init, dtype=float)
    trace = np.empty(max_iter + 1)
    w = problem.weights
    count, status = ilqr_kernel(*chain.packed, base.transform(), q0, U, problem.dt, problem.targets_pos,
                                problem.targets_rot, w.w_v, w.w_R, w.w_b, chain.lower, chain.upper,
                                max_iter, tol, trace)
    if status < 0:
        raise SolverError(f"non-finite cost at iteration {-status - 1}")
    X = np.empty((problem.T + 1, chain.dof))
    X[0] = q0
    for t in range(problem.T):
        X[t + 1] = X[t] + U[t] * problem.dt
    names = {0: "converged", 1: "iteration limit", 2: "regularization limit"}
    return TrackingSolution(base, U, X, problem.dt, [float(c) for c in trace[:count]], names[status])


def base_grid(region: BaseRegion, grid=(5, 5, 4)):
    """Grid nodes: x and y include both ends; a full-circle yaw range excludes the duplicate end."""
    nx, ny, nyaw = grid
    xs = np.linspace(region.x[0], region.x[1], nx) if nx > 1 else np.array([0.5 * sum(region.x)])
    ys = np.linspace(region.y[0], region.y[1], ny) if ny > 1 else np.array([0.5 * sum(region.y)])
    if region.periodic_yaw:
        yaws = region.yaw[0] + (region.yaw[1] - region.yaw[0]) * np.arange(nyaw) / nyaw
    elif nyaw > 1:
        yaws = np.linspace(region.yaw[0], region.yaw[1], nyaw)
    else:
        yaws = np.array([0.5 * sum(region.yaw)])
    pts = [(float(x), float(y), float(a)) for x in xs for y in ys for a in yaws]
    # drop duplicates from collapsed ranges, keep order
    return list(dict.fromkeys(pts))


@dataclass
class BaseSearch:
    grid: tuple = (5, 5, 4)
    cem_iters: int = 10
    population: int = 16
    elites: int = 4
    refine_top: int = 3
    inner_iters: int = 60
    final_iters: int = 200
    seed: int = 0


def solve_with_base(problem: TrackingProblem, search: BaseSearch | None = None,
                    progress=None) -> TrackingSolution:
    """Grid over (x, y, yaw), cross-entropy refinement of the best cells, full solve of the winner."""
    s = search or BaseSearch()
    region = problem.region
    z = region.z

    def run(x, y, yaw, iters):
        try:
            return solve_velocities(problem, BaseMount(x, y, yaw, z), max_iter=iters)
        except SolverError:
            return None

    scored = []
    for idx, (x, y, yaw) in enumerate(base_grid(region, s.grid)):
        sol = run(x, y, yaw, s.inner_iters)
        if sol is not None:
            scored.append((sol.cost, idx, (x, y, yaw), sol))
    if not scored:
        raise SolverError("every base candidate failed")
    scored.sort(key=lambda r: (r[0], r[1]))
    nx, ny, nyaw = s.grid
    half = np.array([(region.x[1] - region.x[0]) / max(nx - 1, 1) / 2,
                     (region.y[1] - region.y[0]) / max(ny - 1, 1) / 2,
                     (region.yaw[1] - region.yaw[0]) / max(nyaw - (0 if region.periodic_yaw else 1), 1) / 2])
    lo = np.array([region.x[0], region.y[0], region.yaw[0]])
    hi = np.array([region.x[1], region.y[1], region.yaw[1]])
    best = scored[0]
    rng = np.random.default_rng(s.seed)
    for rank in range(min(s.refine_top, len(scored)) if s.cem_iters > 0 else 0):
        mean = np.array(scored[rank][2])
        std = half.copy()
        for _ in range(s.cem_iters):
            if np.all(std < 1e-9):
                break
            pop = mean + rng.standard_normal((s.population, 3)) * std
            pop[:, :2] = np.clip(pop[:, :2], lo[:2], hi[:2])
            if not region.periodic_yaw:
                pop[:, 2] = np.clip(pop[:, 2], lo[2], hi[2])
            results = []
            for j, (x, y, yaw) in enumerate(pop):
                sol = run(float(x), float(y), float(yaw), s.inner_iters)
                if sol is not None:
                    results.append((sol.cost, j, sol))
                    if sol.cost < best[0]:
                        best = (sol.cost, -1, (float(x), float(y), sol.base.yaw), sol)
            if len(results) < s.elites:
                break
            results.sort(key=lambda r: (r[0], r[1]))
            el = pop[[r[1] for r in results[: s.elites]]]
            mean = el.mean(axis=0)
            std = el.std(axis=0) + 1e-6
        if progress:
            progress(rank, best[0])
    x, y, yaw = best[2]
    final = solve_velocities(problem, BaseMount(x, y, yaw, z), max_iter=s.final_iters,
                             init=best[3].velocities)
    if final.cost > best[0]:
        return best[3]
    # the warm start continues from the inner solve; report the whole history
    final.cost_trace = best[3].cost_trace + final.cost_trace[1:]
    return final


# -- demonstration rollout ------------------------------------------------------

def rollout_demo(robot_env, solution: TrackingSolution, seed: int | None = None):
    """Execute the solution velocities in a :class:`~toolimit.envsim.RobotEnv`.

    Returns:
        (states (T, M), actions (T, N), total goal reward, trace).
    """
    if not np.array_equal(robot_env.q0, solution.states[0]) or robot_env.base != solution.base:
        raise ValueError("robot environment does not match the solution's base and q0")
    H = robot_env.config.horizon
    if solution.velocities.shape[0] < H:
        raise ValueError(f"solution has {solution.velocities.shape[0]} steps, environment horizon is {H}")
    s = robot_env.reset(seed)
    states, actions = [], []
    total = 0.0
    for t in range(H):
        a = solution.velocities[t]
        states.append(s)
        actions.append(a.copy())
        s, _, done, info = robot_env.step(a)
        total += info["goal_reward"]
        if done:
            break
    return np.array(states), np.array(actions), total, robot_env.trace


# -- solution files ---------------------------------------------------------------

def save_solution(sol: TrackingSolution, path) -> None:
    b = sol.base
    lines = ["# toolimit tracking solution",
             f"base {b.x!r} {b.y!r} {b.yaw!r} {b.z!r}",
             f"dt {sol.dt!r}",
             f"status {sol.status.replace(' ', '_')}",
             "cost " + " ".join(repr(float(c)) for c in sol.cost_trace)]
    for t, q in enumerate(sol.states):
        lines.append(f"q {t} " + " ".join(repr(float(v)) for v in q))
    for t, v in enumerate(sol.velocities):
        lines.append(f"v {t} " + " ".join(repr(float(x)) for x in v))
    Path(path).write_text("\n".join(lines) + "\n")


def load_solution(path) -> TrackingSolution:
    base = dt = None
    status = "converged"
    cost, qs, vs = [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "base":
                base = BaseMount(*(float(t) for t in tok[1:5]))
            elif tok[0] == "dt":
                dt = float(tok[1])
            elif tok[0] == "status":
                status = tok[1].replace("_", " ")
            elif tok[0] == "cost":
                cost = [float(t) for t in tok[1:]]
            elif tok[0] == "q":
                qs.append([float(t) for t in tok[2:]])
            elif tok[0] == "v":
                vs.append([float(t) for t in tok[2:]])
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (ValueError, IndexError, TypeError) as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if base is None or dt is None:
        raise ValueError(f"{path}: missing base or dt record")
    return TrackingSolution(base, np.array(vs), np.array(qs), dt, cost, status)


__all__ = [
    "BaseRegion", "BaseSearch", "SolverError", "TrackingProblem", "TrackingSolution", "TrackingWeights",
    "base_grid", "ilqr_kernel", "inverse_kinematics", "load_solution", "rollout_demo", "save_solution",
    "solve_velocities", "solve_with_base", "stage_cost",
]
