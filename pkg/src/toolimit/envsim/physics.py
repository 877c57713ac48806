"""Compiled kernels for the simplified contact physics.

Spheres are point masses with a radius; they do not collide with each
other. Sleeping spheres are skipped until the blade comes near; a sphere
spawned at rest on a support would stay put anyway. Every collider is an
oriented box given by ``center``, ``rot`` (world-from-box) and half extents. Contacts use
position projection, restitution 0 and a Coulomb friction cap on the
tangential impulse. The tool is kinematic: its pose is interpolated between
the previous and the new control pose across substeps.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def mat_to_quat(R):
    q = np.empty(4)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q[0] = 0.25 * s
        q[1] = (R[2, 1] - R[1, 2]) / s
        q[2] = (R[0, 2] - R[2, 0]) / s
        q[3] = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q[0] = (R[2, 1] - R[1, 2]) / s
        q[1] = 0.25 * s
        q[2] = (R[0, 1] + R[1, 0]) / s
        q[3] = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q[0] = (R[0, 2] - R[2, 0]) / s
        q[1] = (R[0, 1] + R[1, 0]) / s
        q[2] = 0.25 * s
        q[3] = (R[1, 2] + R[2, 1]) / s
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q[0] = (R[1, 0] - R[0, 1]) / s
        q[1] = (R[0, 2] + R[2, 0]) / s
        q[2] = (R[1, 2] + R[2, 1]) / s
        q[3] = 0.25 * s
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    for i in range(4):
        q[i] /= n
    return q


@njit(cache=True)
def quat_to_mat(q, R):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)


@njit(cache=True)
def interpolate_pose(T0, T1, s, out):
    """Linear position, slerp rotation; ``out`` is 4x4."""
    q0 = mat_to_quat(T0[:3, :3])
    q1 = mat_to_quat(T1[:3, :3])
    d = q0[0] * q1[0] + q0[1] * q1[1] + q0[2] * q1[2] + q0[3] * q1[3]
    if d < 0.0:
        for i in range(4):
            q1[i] = -q1[i]
        d = -d
    q = np.empty(4)
    if d > 0.9995:
        for i in range(4):
            q[i] = q0[i] + s * (q1[i] - q0[i])
    else:
        th = math.acos(min(d, 1.0))
        a = math.sin((1.0 - s) * th) / math.sin(th)
        b = math.sin(s * th) / math.sin(th)
        for i in range(4):
            q[i] = a * q0[i] + b * q1[i]
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    for i in range(4):
        q[i] /= n
    R = np.empty((3, 3))
    quat_to_mat(q, R)
    for i in range(3):
        for j in range(3):
            out[i, j] = R[i, j]
        out[i, 3] = T0[i, 3] + s * (T1[i, 3] - T0[i, 3])
        out[3, i] = 0.0
    out[3, 3] = 1.0


@njit(cache=True)
def attach_box(T, local_center, rot_out):
    """World center and rotation of a box fixed at ``local_center`` in frame ``T``."""
    c = np.empty(3)
    for i in range(3):
        c[i] = T[i, 3] + T[i, 0] * local_center[0] + T[i, 1] * local_center[1] + T[i, 2] * local_center[2]
        for j in range(3):
            rot_out[i, j] = T[i, j]
    return c


@njit(cache=True)
def box_distance(p, c, R, h):
    """Distance from point ``p`` to an oriented box (0 inside)."""
    d2 = 0.0
    for k in range(3):
        loc = (p[0] - c[0]) * R[0, k] + (p[1] - c[1]) * R[1, k] + (p[2] - c[2]) * R[2, k]
        e = abs(loc) - h[k]
        if e > 0.0:
            d2 += e * e
    return math.sqrt(d2)


@njit(cache=True, inline="always")
def _contact(px, py, pz, r, c, R, h):
    """Scalar sphere-vs-oriented-box test: (depth, nx, ny, nz); depth <= 0 means apart."""
    d0 = px - c[0]
    d1 = py - c[1]
    d2 = pz - c[2]
    l0 = d0 * R[0, 0] + d1 * R[1, 0] + d2 * R[2, 0]
    l1 = d0 * R[0, 1] + d1 * R[1, 1] + d2 * R[2, 1]
    l2 = d0 * R[0, 2] + d1 * R[1, 2] + d2 * R[2, 2]
    e0 = abs(l0) - h[0]
    e1 = abs(l1) - h[1]
    e2 = abs(l2) - h[2]
    n0 = 0.0
    n1 = 0.0
    n2 = 0.0
    if e0 <= 0.0 and e1 <= 0.0 and e2 <= 0.0:
        # centre inside: push out through the nearest face
        if e0 >= e1 and e0 >= e2:
            n0 = 1.0 if l0 >= 0.0 else -1.0
            depth = r - e0
        elif e1 >= e2:
            n1 = 1.0 if l1 >= 0.0 else -1.0
            depth = r - e1
        else:
            n2 = 1.0 if l2 >= 0.0 else -1.0
            depth = r - e2
    else:
        n0 = l0 - min(max(l0, -h[0]), h[0])
        n1 = l1 - min(max(l1, -h[1]), h[1])
        n2 = l2 - min(max(l2, -h[2]), h[2])
        dist = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
        if dist >= r:
            return 0.0, 0.0, 0.0, 0.0
        n0 /= dist
        n1 /= dist
        n2 /= dist
        depth = r - dist
    return (depth, R[0, 0] * n0 + R[0, 1] * n1 + R[0, 2] * n2,
            R[1, 0] * n0 + R[1, 1] * n1 + R[1, 2] * n2,
            R[2, 0] * n0 + R[2, 1] * n1 + R[2, 2] * n2)


@njit(cache=True, inline="always")
def _resolve(px, py, pz, vx, vy, vz, depth, nx, ny, nz, cvx, cvy, cvz, mu):
    """Scalar projection plus restitution-0 impulse with a Coulomb cap."""
    px += nx * depth
    py += ny * depth
    pz += nz * depth
    r0 = vx - cvx
    r1 = vy - cvy
    r2 = vz - cvz
    vn = r0 * nx + r1 * ny + r2 * nz
    if vn < 0.0:
        jn = -vn
        t0 = r0 - vn * nx
        t1 = r1 - vn * ny
        t2 = r2 - vn * nz
        vt = math.sqrt(t0 * t0 + t1 * t1 + t2 * t2)
        f = 1.0
        if vt > mu * jn:
            f = mu * jn / vt
        vx += jn * nx - f * t0
        vy += jn * ny - f * t1
        vz += jn * nz - f * t2
    return px, py, pz, vx, vy, vz


@njit(cache=True)
def sphere_box_contact(p, r, c, R, h, normal):
    """Penetration depth of a sphere against a box, normal written into ``normal``.

    Returns a value <= 0 when there is no contact.
    """
    depth, nx, ny, nz = _contact(p[0], p[1], p[2], r, c, R, h)
    if depth > 0.0:
        normal[0] = nx
        normal[1] = ny
        normal[2] = nz
    return depth


@njit(cache=True)
def resolve_contact(p, v, normal, depth, cv, mu):
    """Project out of the collider and apply a restitution-0 impulse with friction."""
    p[0], p[1], p[2], v[0], v[1], v[2] = _resolve(p[0], p[1], p[2], v[0], v[1], v[2], depth,
                                                  normal[0], normal[1], normal[2],
                                                  cv[0], cv[1], cv[2], mu)


@njit(cache=True)
def _point_velocity(x, Tprev, Tcur, dt, out):
    """Velocity of the material point at ``x`` of a body moving from Tprev to Tcur."""
    loc = np.empty(3)
    for k in range(3):
        loc[k] = ((x[0] - Tcur[0, 3]) * Tcur[0, k] + (x[1] - Tcur[1, 3]) * Tcur[1, k]
                  + (x[2] - Tcur[2, 3]) * Tcur[2, k])
    for i in range(3):
        xp = Tprev[i, 3] + Tprev[i, 0] * loc[0] + Tprev[i, 1] * loc[1] + Tprev[i, 2] * loc[2]
        out[i] = (x[i] - xp) / dt


@njit(cache=True)
def in_box_interior(p, gc, gR, gh):
    """Sphere center strictly inside the goal-box interior volume."""
    for k in range(3):
        loc = (p[0] - gc[0]) * gR[0, k] + (p[1] - gc[1]) * gR[1, k] + (p[2] - gc[2]) * gR[2, k]
        if abs(loc) >= gh[k]:
            return False
    return True


@njit(cache=True, inline="always")
def _statics(px, py, pz, vx, vy, vz, radius, static_c, static_R, static_h, reach2, mu):
    for b in range(static_c.shape[0]):
        dx = px - static_c[b, 0]
        dy = py - static_c[b, 1]
        dz = pz - static_c[b, 2]
        if dx * dx + dy * dy + dz * dz > reach2[b]:
            continue
        depth, nx, ny, nz = _contact(px, py, pz, radius, static_c[b], static_R[b], static_h[b])
        if depth > 0.0:
            px, py, pz, vx, vy, vz = _resolve(px, py, pz, vx, vy, vz, depth, nx, ny, nz,
                                              0.0, 0.0, 0.0, mu)
    return px, py, pz, vx, vy, vz


@njit(cache=True)
def spade_control_step(pos, vel, awake, delivered, static_c, static_R, static_h,
                       goal_c, goal_R, goal_h, T_prev, T_new, blade_local, blade_h,
                       radius, mu, gravity, dt, substeps, kill_z, wake_margin):
    """Advance the spade scene by one control step.

    Returns:
        (number of spheres newly inside the goal box, max static penetration
        after projection).
    """
    n = pos.shape[0]
    nb = static_c.shape[0]
    dts = dt / substeps
    Tk_prev = np.empty((4, 4))
    Tk = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            Tk_prev[i, j] = T_prev[i, j]
    Rb = np.empty((3, 3))
    reach2 = np.empty(nb)
    for b in range(nb):
        rb = math.sqrt(static_h[b, 0] ** 2 + static_h[b, 1] ** 2 + static_h[b, 2] ** 2) + radius
        reach2[b] = rb * rb
    newly = 0
    max_pen = 0.0
    blade_rad = math.sqrt(blade_h[0] ** 2 + blade_h[1] ** 2 + blade_h[2] ** 2)
    wake2 = (blade_rad + radius + wake_margin) ** 2
    blade2 = (blade_rad + radius) ** 2
    for k in range(1, substeps + 1):
        interpolate_pose(T_prev, T_new, k / substeps, Tk)
        bc = attach_box(Tk, blade_local, Rb)
        for s in range(n):
            px = pos[s, 0]
            py = pos[s, 1]
            pz = pos[s, 2]
            bx = px - bc[0]
            by = py - bc[1]
            bz = pz - bc[2]
            near_blade = bx * bx + by * by + bz * bz
            if not awake[s]:
                if near_blade > wake2:
                    continue
                if box_distance(pos[s], bc, Rb, blade_h) > radius + wake_margin:
                    continue
                awake[s] = True
            if pz < kill_z:
                vel[s, 0] = 0.0
                vel[s, 1] = 0.0
                vel[s, 2] = 0.0
                continue
            vx = vel[s, 0]
            vy = vel[s, 1]
            vz = vel[s, 2] - gravity * dts
            px += vx * dts
            py += vy * dts
            pz += vz * dts
            px, py, pz, vx, vy, vz = _statics(px, py, pz, vx, vy, vz, radius, static_c, static_R,
                                              static_h, reach2, mu)
            bx = px - bc[0]
            by = py - bc[1]
            bz = pz - bc[2]
            if bx * bx + by * by + bz * bz <= blade2:
                depth, nx, ny, nz = _contact(px, py, pz, radius, bc, Rb, blade_h)
                if depth > 0.0:
                    # velocity of the blade surface point under the sphere
                    qx = px + nx * (depth - radius)
                    qy = py + ny * (depth - radius)
                    qz = pz + nz * (depth - radius)
                    l0 = (qx - Tk[0, 3]) * Tk[0, 0] + (qy - Tk[1, 3]) * Tk[1, 0] + (qz - Tk[2, 3]) * Tk[2, 0]
                    l1 = (qx - Tk[0, 3]) * Tk[0, 1] + (qy - Tk[1, 3]) * Tk[1, 1] + (qz - Tk[2, 3]) * Tk[2, 1]
                    l2 = (qx - Tk[0, 3]) * Tk[0, 2] + (qy - Tk[1, 3]) * Tk[1, 2] + (qz - Tk[2, 3]) * Tk[2, 2]
                    cvx = (qx - (Tk_prev[0, 3] + Tk_prev[0, 0] * l0 + Tk_prev[0, 1] * l1 + Tk_prev[0, 2] * l2)) / dts
                    cvy = (qy - (Tk_prev[1, 3] + Tk_prev[1, 0] * l0 + Tk_prev[1, 1] * l1 + Tk_prev[1, 2] * l2)) / dts
                    cvz = (qz - (Tk_prev[2, 3] + Tk_prev[2, 0] * l0 + Tk_prev[2, 1] * l1 + Tk_prev[2, 2] * l2)) / dts
                    px, py, pz, vx, vy, vz = _resolve(px, py, pz, vx, vy, vz, depth, nx, ny, nz,
                                                      cvx, cvy, cvz, mu)
                    # a blade push can shove a sphere into a wall; settle against statics again
                    px, py, pz, vx, vy, vz = _statics(px, py, pz, vx, vy, vz, radius, static_c,
                                                      static_R, static_h, reach2, mu)
            for b in range(nb):
                dx = px - static_c[b, 0]
                dy = py - static_c[b, 1]
                dz = pz - static_c[b, 2]
                if dx * dx + dy * dy + dz * dz <= reach2[b]:
                    depth = _contact(px, py, pz, radius, static_c[b], static_R[b], static_h[b])[0]
                    if depth > max_pen:
                        max_pen = depth
            pos[s, 0] = px
            pos[s, 1] = py
            pos[s, 2] = pz
            vel[s, 0] = vx
            vel[s, 1] = vy
            vel[s, 2] = vz
            if not delivered[s] and in_box_interior(pos[s], goal_c, goal_R, goal_h):
                delivered[s] = True
                newly += 1
        for i in range(4):
            for j in range(4):
                Tk_prev[i, j] = Tk[i, j]
    return newly, max_pen


@njit(cache=True)
def count_in_box(pos, goal_c, goal_R, goal_h):
    c = 0
    for s in range(pos.shape[0]):
        if in_box_interior(pos[s], goal_c, goal_R, goal_h):
            c += 1
    return c


@njit(cache=True)
def spade_rollout(head_poses, pos, vel, awake, delivered, static_c, static_R, static_h,
                  goal_c, goal_R, goal_h, blade_local, blade_h, radius, mu, gravity, dt,
                  substeps, kill_z, wake_margin):
    """Drive the tool through ``head_poses`` (T+1, 4, 4); returns per-step rewards and in-box counts."""
    steps = head_poses.shape[0] - 1
    rewards = np.zeros(steps)
    inbox = np.zeros(steps, dtype=np.int64)
    for t in range(steps):
        newly, _ = spade_control_step(pos, vel, awake, delivered, static_c, static_R, static_h,
                                      goal_c, goal_R, goal_h, head_poses[t], head_poses[t + 1],
                                      blade_local, blade_h, radius, mu, gravity, dt, substeps,
                                      kill_z, wake_margin)
        rewards[t] = newly
        inbox[t] = count_in_box(pos, goal_c, goal_R, goal_h)
    return rewards, inbox


@njit(cache=True)
def hammer_control_step(depth, nail_xyz, head_radius, T_prev, T_new, head_local, head_h,
                        kappa, strike_speed, dt, substeps, travel):
    """Advance the nail; returns the new exposed depth ``d_z``."""
    dts = dt / substeps
    Tk = np.empty((4, 4))
    Rb = np.empty((3, 3))
    Rp = np.empty((3, 3))
    prev_c = attach_box(T_prev, head_local, Rp)
    p = np.empty(3)
    for k in range(1, substeps + 1):
        interpolate_pose(T_prev, T_new, k / substeps, Tk)
        c = attach_box(Tk, head_local, Rb)
        v_down = (prev_c[2] - c[2]) / dts
        p[0] = nail_xyz[0]
        p[1] = nail_xyz[1]
        p[2] = nail_xyz[2] + depth
        if v_down >= strike_speed and box_distance(p, c, Rb, head_h) < head_radius:
            depth -= kappa * v_down * dts
            if depth < 0.0:
                depth = 0.0
        if depth > travel:
            depth = travel
        prev_c = c
    return depth


@njit(cache=True)
def hammer_rollout(head_poses, depth, nail_xyz, head_radius, head_local, head_h, kappa,
                   strike_speed, dt, substeps, travel, planted_tol):
    steps = head_poses.shape[0] - 1
    rewards = np.zeros(steps)
    depths = np.zeros(steps)
    for t in range(steps):
        depth = hammer_control_step(depth, nail_xyz, head_radius, head_poses[t], head_poses[t + 1],
                                    head_local, head_h, kappa, strike_speed, dt, substeps, travel)
        depths[t] = depth
        if depth < planted_tol:
            rewards[t] = 1.0
            return rewards[:t + 1], depths[:t + 1]
    return rewards, depths


@njit(cache=True)
def _blade_points(T, a_local, b_local, A, B):
    for i in range(3):
        A[i] = T[i, 3] + T[i, 0] * a_local[0] + T[i, 1] * a_local[1] + T[i, 2] * a_local[2]
        B[i] = T[i, 3] + T[i, 0] * b_local[0] + T[i, 1] * b_local[1] + T[i, 2] * b_local[2]


@njit(cache=True)
def scythe_control_step(grass_xy, cut, ground_z, grass_half, grass_height, T_prev, T_new,
                        a_local, b_local, blade_half, z_max, v_min, dt, substeps):
    """Cut grass elements crossed low and fast enough; returns the number cut this step."""
    dts = dt / substeps
    Tk = np.empty((4, 4))
    Tp = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            Tp[i, j] = T_prev[i, j]
    A = np.empty(3)
    B = np.empty(3)
    Ap = np.empty(3)
    Bp = np.empty(3)
    newly = 0
    for k in range(1, substeps + 1):
        interpolate_pose(T_prev, T_new, k / substeps, Tk)
        _blade_points(Tk, a_local, b_local, A, B)
        _blade_points(Tp, a_local, b_local, Ap, Bp)
        ex = B[0] - A[0]
        ey = B[1] - A[1]
        l2 = ex * ex + ey * ey
        for g in range(grass_xy.shape[0]):
            if cut[g]:
                continue
            if l2 > 1e-18:
                s = ((grass_xy[g, 0] - A[0]) * ex + (grass_xy[g, 1] - A[1]) * ey) / l2
                s = min(max(s, 0.0), 1.0)
            else:
                s = 0.0
            cx = A[0] + s * ex
            cy = A[1] + s * ey
            d = math.sqrt((cx - grass_xy[g, 0]) ** 2 + (cy - grass_xy[g, 1]) ** 2)
            if d > grass_half + blade_half:
                # fast blades can jump over an element within one substep
                side_now = ex * (grass_xy[g, 1] - A[1]) - ey * (grass_xy[g, 0] - A[0])
                side_prev = ((Bp[0] - Ap[0]) * (grass_xy[g, 1] - Ap[1])
                             - (Bp[1] - Ap[1]) * (grass_xy[g, 0] - Ap[0]))
                raw = ((grass_xy[g, 0] - A[0]) * ex + (grass_xy[g, 1] - A[1]) * ey) / max(l2, 1e-18)
                if side_now * side_prev > 0.0 or raw < 0.0 or raw > 1.0:
                    continue
            z = A[2] + s * (B[2] - A[2]) - ground_z
            if z < 0.0 or z >= z_max or z > grass_height:
                continue
            px = Ap[0] + s * (Bp[0] - Ap[0])
            py = Ap[1] + s * (Bp[1] - Ap[1])
            speed = math.sqrt((cx - px) ** 2 + (cy - py) ** 2) / dts
            if speed >= v_min:
                cut[g] = True
                newly += 1
        for i in range(4):
            for j in range(4):
                Tp[i, j] = Tk[i, j]
    return newly


@njit(cache=True)
def scythe_rollout(head_poses, grass_xy, cut, ground_z, grass_half, grass_height, a_local,
                   b_local, blade_half, z_max, v_min, dt, substeps):
    steps = head_poses.shape[0] - 1
    rewards = np.zeros(steps)
    for t in range(steps):
        rewards[t] = scythe_control_step(grass_xy, cut, ground_z, grass_half, grass_height,
                                         head_poses[t], head_poses[t + 1], a_local, b_local,
                                         blade_half, z_max, v_min, dt, substeps)
    return rewards
