"""Compiled rigid-body kernels.

Everything here works on the packed array form of a robot model (see
``model.RobotModel.arrays``) so that numba can compile it. Conventions:

* configuration ``q = [base position (3), base quaternion (w, x, y, z), joints]``
* velocity ``v = [base linear velocity (world), base angular velocity (body), joint rates]``
* link ``i >= 1`` carries exactly one revolute joint, joint index ``i - 1``

Dynamics quantities are assembled in the world frame: spatial vectors are
(angular, linear) pairs taken about the world origin.
"""

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)

# step() status codes; positive values index the offending quantity.
STATUS_OK = 0
STATUS_NONFINITE_FORCE = 1
STATUS_NONFINITE_VELOCITY = 2
STATUS_NONFINITE_CONFIGURATION = 3


# --------------------------------------------------------------------------
# small 3-vector / 3x3 helpers (explicit loops beat BLAS calls at this size)


@njit(**_JIT)
def cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(**_JIT)
def mat3_vec(A, x):
    out = np.empty(3)
    for r in range(3):
        out[r] = A[r, 0] * x[0] + A[r, 1] * x[1] + A[r, 2] * x[2]
    return out


@njit(**_JIT)
def mat3_tvec(A, x):
    out = np.empty(3)
    for r in range(3):
        out[r] = A[0, r] * x[0] + A[1, r] * x[1] + A[2, r] * x[2]
    return out


@njit(**_JIT)
def mat3_mul(A, B):
    out = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            out[r, c] = A[r, 0] * B[0, c] + A[r, 1] * B[1, c] + A[r, 2] * B[2, c]
    return out


@njit(**_JIT)
def skew(v):
    S = np.zeros((3, 3))
    S[0, 1] = -v[2]
    S[0, 2] = v[1]
    S[1, 0] = v[2]
    S[1, 2] = -v[0]
    S[2, 0] = -v[1]
    S[2, 1] = v[0]
    return S


@njit(**_JIT)
def axis_angle_rot(axis, angle):
    c = math.cos(angle)
    s = math.sin(angle)
    t = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    R = np.empty((3, 3))
    R[0, 0] = t * x * x + c
    R[0, 1] = t * x * y - s * z
    R[0, 2] = t * x * z + s * y
    R[1, 0] = t * x * y + s * z
    R[1, 1] = t * y * y + c
    R[1, 2] = t * y * z - s * x
    R[2, 0] = t * x * z - s * y
    R[2, 1] = t * y * z + s * x
    R[2, 2] = t * z * z + c
    return R


# --------------------------------------------------------------------------
# quaternions, scalar first


@njit(**_JIT)
def quat_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(**_JIT)
def quat_conj(q):
    out = np.empty(4)
    out[0] = q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = -q[3]
    return out


@njit(**_JIT)
def quat_to_rot(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


@njit(**_JIT)
def quat_exp(w):
    """Unit quaternion of the rotation vector ``w``."""
    th = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    out = np.empty(4)
    if th < 1e-8:
        s = 0.5 - th * th / 48.0
        out[0] = 1.0 - th * th / 8.0
    else:
        s = math.sin(0.5 * th) / th
        out[0] = math.cos(0.5 * th)
    out[1] = s * w[0]
    out[2] = s * w[1]
    out[3] = s * w[2]
    return out


@njit(**_JIT)
def quat_log(q):
    """Rotation vector of a unit quaternion (shortest arc)."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    vn = math.sqrt(x * x + y * y + z * z)
    out = np.empty(3)
    if vn < 1e-12:
        f = 2.0 / w
    else:
        f = 2.0 * math.atan2(vn, w) / vn
    out[0] = f * x
    out[1] = f * y
    out[2] = f * z
    return out


@njit(**_JIT)
def integrate_config(q, v, dt):
    """Advance ``q`` by velocity ``v`` over ``dt`` (exponential map on the base)."""
    out = q.copy()
    for k in range(3):
        out[k] = q[k] + dt * v[k]
    if v[3] == 0.0 and v[4] == 0.0 and v[5] == 0.0:
        for j in range(7, q.shape[0]):
            out[j] = q[j] + dt * v[j - 1]
        return out
    qb = quat_mul(q[3:7], quat_exp(dt * v[3:6]))
    n = math.sqrt(qb[0] ** 2 + qb[1] ** 2 + qb[2] ** 2 + qb[3] ** 2)
    for k in range(4):
        out[3 + k] = qb[k] / n
    for j in range(7, q.shape[0]):
        out[j] = q[j] + dt * v[j - 1]
    return out


# --------------------------------------------------------------------------
# in-place helpers for the hot loops (no allocation per call)


@njit(inline="always")
def _cross_add(a, b, out, scale):
    out[0] += scale * (a[1] * b[2] - a[2] * b[1])
    out[1] += scale * (a[2] * b[0] - a[0] * b[2])
    out[2] += scale * (a[0] * b[1] - a[1] * b[0])


@njit(inline="always")
def _dot3(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(inline="always")
def _rot_apply(R, x, out):
    for r in range(3):
        out[r] = R[r, 0] * x[0] + R[r, 1] * x[1] + R[r, 2] * x[2]


@njit(inline="always")
def _rot_apply_t(R, x, out):
    for r in range(3):
        out[r] = R[0, r] * x[0] + R[1, r] * x[1] + R[2, r] * x[2]


# --------------------------------------------------------------------------
# kinematics


@njit(**_JIT)
def poses_into(parent, axis, trans, rot, q, R, P, Z):
    """Fill world rotations ``R``, origins ``P`` and joint axes ``Z`` of every link."""
    nl = parent.shape[0]
    R[0] = quat_to_rot(q[3:7])
    for k in range(3):
        P[0, k] = q[k]
        Z[0, k] = 0.0
    B = np.empty((3, 3))
    for i in range(1, nl):
        pa = parent[i]
        Rp = R[pa]
        t = trans[i]
        for r in range(3):
            P[i, r] = P[pa, r] + Rp[r, 0] * t[0] + Rp[r, 1] * t[1] + Rp[r, 2] * t[2]
        F = rot[i]
        for r in range(3):
            for c in range(3):
                B[r, c] = Rp[r, 0] * F[0, c] + Rp[r, 1] * F[1, c] + Rp[r, 2] * F[2, c]
        A = axis_angle_rot(axis[i], q[6 + i])
        Ri = R[i]
        for r in range(3):
            for c in range(3):
                Ri[r, c] = B[r, 0] * A[0, c] + B[r, 1] * A[1, c] + B[r, 2] * A[2, c]
        ax = axis[i]
        for r in range(3):
            Z[i, r] = B[r, 0] * ax[0] + B[r, 1] * ax[1] + B[r, 2] * ax[2]


@njit(**_JIT)
def link_poses(parent, axis, trans, rot, q):
    """World rotation and origin of every link."""
    nl = parent.shape[0]
    R = np.empty((nl, 3, 3))
    P = np.empty((nl, 3))
    Z = np.empty((nl, 3))
    poses_into(parent, axis, trans, rot, q, R, P, Z)
    return R, P


@njit(**_JIT)
def world_axes(R, axis):
    nl = R.shape[0]
    Z = np.zeros((nl, 3))
    for i in range(1, nl):
        _rot_apply(R[i], axis[i], Z[i])
    return Z


@njit(**_JIT)
def world_points(R, P, links, offsets):
    n = links.shape[0]
    out = np.empty((n, 3))
    for k in range(n):
        _rot_apply(R[links[k]], offsets[k], out[k])
        for r in range(3):
            out[k, r] += P[links[k], r]
    return out


@njit(**_JIT)
def point_jacobian_into(parent, R, P, Z, link, x, J):
    """World-velocity Jacobian (3 x nv) of point ``x`` rigidly attached to ``link``."""
    J[:, :] = 0.0
    for k in range(3):
        J[k, k] = 1.0
    r0 = np.empty(3)
    for k in range(3):
        r0[k] = x[k] - P[0, k]
    R0 = R[0]
    for k in range(3):
        # body-frame base rate: column k is (R0 e_k) x r0
        e0, e1, e2 = R0[0, k], R0[1, k], R0[2, k]
        J[0, 3 + k] = e1 * r0[2] - e2 * r0[1]
        J[1, 3 + k] = e2 * r0[0] - e0 * r0[2]
        J[2, 3 + k] = e0 * r0[1] - e1 * r0[0]
    i = link
    while i > 0:
        z = Z[i]
        d0, d1, d2 = x[0] - P[i, 0], x[1] - P[i, 1], x[2] - P[i, 2]
        J[0, 5 + i] = z[1] * d2 - z[2] * d1
        J[1, 5 + i] = z[2] * d0 - z[0] * d2
        J[2, 5 + i] = z[0] * d1 - z[1] * d0
        i = parent[i]


@njit(**_JIT)
def point_jacobian(parent, R, P, Z, link, x):
    J = np.empty((3, 5 + parent.shape[0]))
    point_jacobian_into(parent, R, P, Z, link, x, J)
    return J


@njit(**_JIT)
def points_jacobian(parent, axis, trans, rot, q, links, offsets):
    nl = parent.shape[0]
    R = np.empty((nl, 3, 3))
    P = np.empty((nl, 3))
    Z = np.empty((nl, 3))
    poses_into(parent, axis, trans, rot, q, R, P, Z)
    X = world_points(R, P, links, offsets)
    n = links.shape[0]
    out = np.empty((n, 3, 5 + nl))
    for k in range(n):
        point_jacobian_into(parent, R, P, Z, links[k], X[k], out[k])
    return out


@njit(**_JIT)
def points_along(parent, axis, trans, rot, Q, links, offsets):
    """World positions of attached points for every configuration row of ``Q``."""
    nl = parent.shape[0]
    T = Q.shape[0]
    R = np.empty((nl, 3, 3))
    P = np.empty((nl, 3))
    Z = np.empty((nl, 3))
    out = np.empty((T, links.shape[0], 3))
    for t in range(T):
        poses_into(parent, axis, trans, rot, Q[t], R, P, Z)
        out[t] = world_points(R, P, links, offsets)
    return out


# --------------------------------------------------------------------------
# dynamics


@njit(**_JIT)
def mass_matrix_k(parent, R, P, Z, mass, com, inertia):
    """Composite-rigid-body mass matrix from precomputed link kinematics.

    Each subtree's inertia is kept as (mass, first moment about the world origin,
    rotational inertia about the world origin), which sums without transforms.
    """
    nl = parent.shape[0]
    nv = 5 + nl
    cm = np.empty(nl)
    hm = np.empty((nl, 3))
    Io = np.empty((nl, 3, 3))
    c = np.empty(3)
    for i in range(nl):
        Ri = R[i]
        _rot_apply(Ri, com[i], c)
        for k in range(3):
            c[k] += P[i, k]
        m = mass[i]
        I = inertia[i]
        cc = _dot3(c, c)
        for r in range(3):
            for s in range(3):
                acc = 0.0
                for k in range(3):
                    for l in range(3):
                        acc += Ri[r, k] * I[k, l] * Ri[s, l]
                Io[i, r, s] = acc - m * c[r] * c[s]
            Io[i, r, r] += m * cc
        cm[i] = m
        for k in range(3):
            hm[i, k] = m * c[k]
    for i in range(nl - 1, 0, -1):
        pa = parent[i]
        cm[pa] += cm[i]
        hm[pa] += hm[i]
        Io[pa] += Io[i]

    # world-frame motion subspaces, (angular, linear about the origin)
    S = np.zeros((nv, 6))
    for k in range(3):
        S[k, 3 + k] = 1.0
        for r in range(3):
            S[3 + k, r] = R[0, r, k]
        _cross_add(P[0], S[3 + k, 0:3], S[3 + k, 3:6], 1.0)
    for i in range(1, nl):
        for r in range(3):
            S[5 + i, r] = Z[i, r]
        _cross_add(P[i], Z[i], S[5 + i, 3:6], 1.0)

    M = np.zeros((nv, nv))
    F = np.empty(6)
    for col in range(nv):
        i = 0 if col < 6 else col - 5
        s = S[col]
        # F = I_c s: angular = Io w + h x v, linear = w x h + m v
        for r in range(3):
            F[r] = Io[i, r, 0] * s[0] + Io[i, r, 1] * s[1] + Io[i, r, 2] * s[2]
            F[3 + r] = cm[i] * s[3 + r]
        _cross_add(hm[i], s[3:6], F[0:3], 1.0)
        _cross_add(s[0:3], hm[i], F[3:6], 1.0)
        if col < 6:
            for b in range(col, 6):
                val = 0.0
                for r in range(6):
                    val += S[b, r] * F[r]
                M[b, col] = val
                M[col, b] = val
            continue
        M[col, col] = 0.0
        for r in range(6):
            M[col, col] += s[r] * F[r]
        j = parent[i]
        while j > 0:
            val = 0.0
            for r in range(6):
                val += S[5 + j, r] * F[r]
            M[5 + j, col] = val
            M[col, 5 + j] = val
            j = parent[j]
        for b in range(6):
            val = 0.0
            for r in range(6):
                val += S[b, r] * F[r]
            M[b, col] = val
            M[col, b] = val
    return M


@njit(**_JIT)
def mass_matrix(parent, axis, trans, rot, mass, com, inertia, q):
    nl = parent.shape[0]
    R = np.empty((nl, 3, 3))
    P = np.empty((nl, 3))
    Z = np.empty((nl, 3))
    poses_into(parent, axis, trans, rot, q, R, P, Z)
    return mass_matrix_k(parent, R, P, Z, mass, com, inertia)


@njit(**_JIT)
def rnea_k(parent, R, P, Z, mass, com, inertia, gravity, v, a):
    """Recursive Newton-Euler from precomputed link kinematics."""
    nl = parent.shape[0]
    nv = 5 + nl
    om = np.empty((nl, 3))
    al = np.empty((nl, 3))
    ao = np.empty((nl, 3))
    _rot_apply(R[0], v[3:6], om[0])
    _rot_apply(R[0], a[3:6], al[0])
    for k in range(3):
        ao[0, k] = a[k] - gravity[k]
    r = np.empty(3)
    zq = np.empty(3)
    for i in range(1, nl):
        pa = parent[i]
        qd = v[5 + i]
        qdd = a[5 + i]
        for k in range(3):
            zq[k] = Z[i, k] * qd
            om[i, k] = om[pa, k] + zq[k]
            al[i, k] = al[pa, k] + Z[i, k] * qdd
            r[k] = P[i, k] - P[pa, k]
            ao[i, k] = ao[pa, k]
        _cross_add(om[pa], zq, al[i], 1.0)
        _cross_add(al[pa], r, ao[i], 1.0)
        # w x (w x r) = w (w.r) - r |w|^2
        wr = _dot3(om[pa], r)
        ww = _dot3(om[pa], om[pa])
        for k in range(3):
            ao[i, k] += om[pa, k] * wr - r[k] * ww
    F = np.empty((nl, 3))
    N = np.empty((nl, 3))
    rc = np.empty(3)
    ac = np.empty(3)
    tmp = np.empty(3)
    Iw_al = np.empty(3)
    Iw_om = np.empty(3)
    for i in range(nl):
        Ri = R[i]
        _rot_apply(Ri, com[i], rc)
        for k in range(3):
            ac[k] = ao[i, k]
        _cross_add(al[i], rc, ac, 1.0)
        wr = _dot3(om[i], rc)
        ww = _dot3(om[i], om[i])
        for k in range(3):
            ac[k] += om[i, k] * wr - rc[k] * ww
        m = mass[i]
        I = inertia[i]
        # I_world x = R I R^T x
        _rot_apply_t(Ri, al[i], tmp)
        _rot_apply(I, tmp, Iw_al)
        _rot_apply(Ri, Iw_al, tmp)
        for k in range(3):
            Iw_al[k] = tmp[k]
        _rot_apply_t(Ri, om[i], tmp)
        _rot_apply(I, tmp, Iw_om)
        _rot_apply(Ri, Iw_om, tmp)
        for k in range(3):
            Iw_om[k] = tmp[k]
        for k in range(3):
            F[i, k] = m * ac[k]
            N[i, k] = Iw_al[k]
        _cross_add(om[i], Iw_om, N[i], 1.0)
        _rot_apply(Ri, com[i], rc)
        _cross_add(rc, F[i], N[i], 1.0)
    tau = np.zeros(nv)
    for i in range(nl - 1, 0, -1):
        tau[5 + i] = _dot3(Z[i], N[i])
        pa = parent[i]
        for k in range(3):
            F[pa, k] += F[i, k]
            N[pa, k] += N[i, k]
            r[k] = P[i, k] - P[pa, k]
        _cross_add(r, F[i], N[pa], 1.0)
    for k in range(3):
        tau[k] = F[0, k]
    _rot_apply_t(R[0], N[0], tmp)
    for k in range(3):
        tau[3 + k] = tmp[k]
    return tau


@njit(**_JIT)
def rnea(parent, axis, trans, rot, mass, com, inertia, gravity, q, v, a):
    """Recursive Newton-Euler inverse dynamics: M(q) a + C(q, v) v - g(q)."""
    nl = parent.shape[0]
    R = np.empty((nl, 3, 3))
    P = np.empty((nl, 3))
    Z = np.empty((nl, 3))
    poses_into(parent, axis, trans, rot, q, R, P, Z)
    return rnea_k(parent, R, P, Z, mass, com, inertia, gravity, v, a)


@njit(**_JIT)
def joint_torques(mode, u, qj, vj, kp, kd, effort):
    """Clamped actuator torques; mode 0 = direct torque, 1 = PD position targets."""
    n = u.shape[0]
    tau = np.empty(n)
    for j in range(n):
        if mode == 1:
            t = kp[j] * (u[j] - qj[j]) - kd[j] * vj[j]
        else:
            t = u[j]
        if t > effort[j]:
            t = effort[j]
        elif t < -effort[j]:
            t = -effort[j]
        tau[j] = t
    return tau


@njit(**_JIT)
def contact_forces_k(parent, R, P, Z, clinks, coffsets, v,
                     stiffness, damping, ground, mu, vreg):
    """Compliant ground forces at each contact point from the current state.

    Returns (forces n x 3, per-axis damping for the implicit update n x 3, Jacobians n x 3 x nv).
    Rows of non-penetrating points are zero.
    """
    nl = parent.shape[0]
    nv = 5 + nl
    nc = clinks.shape[0]
    X = world_points(R, P, clinks, coffsets)
    f = np.zeros((nc, 3))
    damp = np.zeros((nc, 3))
    J = np.zeros((nc, 3, nv))
    vel = np.empty(3)
    for k in range(nc):
        depth = ground - X[k, 2]
        if depth <= 0.0:
            continue
        Jk = J[k]
        point_jacobian_into(parent, R, P, Z, clinks[k], X[k], Jk)
        for d in range(3):
            acc = 0.0
            for s in range(nv):
                acc += Jk[d, s] * v[s]
            vel[d] = acc
        fn = stiffness * depth - damping * vel[2]
        if fn <= 0.0:
            continue
        vt = math.sqrt(vel[0] * vel[0] + vel[1] * vel[1])
        eta = mu * fn / max(vt, vreg)
        f[k, 0] = -eta * vel[0]
        f[k, 1] = -eta * vel[1]
        f[k, 2] = fn
        damp[k, 0] = eta
        damp[k, 1] = eta
        damp[k, 2] = damping
    return f, damp, J


@njit(**_JIT)
def contact_forces(parent, axis, trans, rot, clinks, coffsets, q, v,
                   stiffness, damping, ground, mu, vreg):
    nl = parent.shape[0]
    R = np.empty((nl, 3, 3))
    P = np.empty((nl, 3))
    Z = np.empty((nl, 3))
    poses_into(parent, axis, trans, rot, q, R, P, Z)
    return contact_forces_k(parent, R, P, Z, clinks, coffsets, v, stiffness, damping, ground, mu, vreg)


@njit(**_JIT)
def step(parent, axis, trans, rot, mass, com, inertia, gravity,
         lower, upper, effort, free_idx, clinks, coffsets,
         q, v, u, mode, kp, kd, dt,
         stiffness, damping, ground, mu, vreg):
    """One semi-implicit Euler step; returns (q_next, v_next, applied torque, status)."""
    nl = parent.shape[0]
    nv = 5 + nl
    nq = nl - 1
    R = np.empty((nl, 3, 3))
    P = np.empty((nl, 3))
    Z = np.empty((nl, 3))
    poses_into(parent, axis, trans, rot, q, R, P, Z)
    M = mass_matrix_k(parent, R, P, Z, mass, com, inertia)
    rhs = -rnea_k(parent, R, P, Z, mass, com, inertia, gravity, v, np.zeros(nv))
    f, damp, J = contact_forces_k(parent, R, P, Z, clinks, coffsets, v,
                                  stiffness, damping, ground, mu, vreg)
    for k in range(clinks.shape[0]):
        if f[k, 2] <= 0.0:
            continue
        Jk = J[k]
        for d in range(3):
            fd = f[k, d]
            c = dt * damp[k, d]
            for r in range(nv):
                jr = Jk[d, r]
                if jr == 0.0:
                    continue
                rhs[r] += jr * fd
                # contact damping is stiff for light links; take it implicitly
                cj = c * jr
                for s in range(nv):
                    M[r, s] += cj * Jk[d, s]
    for r in range(nv):
        if not math.isfinite(rhs[r]):
            return q.copy(), v.copy(), np.zeros(nq), STATUS_NONFINITE_FORCE

    # PD targets act on the end-of-step state (linearly implicit); a joint whose
    # torque would exceed its limit is fixed at the limit and the system re-solved
    tau = np.empty(nq)
    fixed = np.zeros(nq, dtype=np.bool_)
    if mode == 1:
        for j in range(nq):
            tau[j] = 0.0
    else:
        tau[:] = joint_torques(mode, u, q[7:], v[6:], kp, kd, effort)
        fixed[:] = True
    # a joint that would cross a limit during the step is held by a velocity
    # constraint landing it on the limit; the constraint torque stays internal,
    # so the rest of the body does not pick up a spurious reaction
    nf = free_idx.shape[0]
    locked = np.zeros(nq, dtype=np.bool_)
    v_lock = np.zeros(nq)
    v_next = np.zeros(nv)
    for _ in range(2 * nq + 2):
        keep = np.empty(nf, dtype=np.int64)
        n = 0
        for r in range(nf):
            fr = free_idx[r]
            if fr >= 6 and locked[fr - 6]:
                v_next[fr] = v_lock[fr - 6]
            else:
                keep[n] = fr
                n += 1
        Af = np.empty((n, n))
        bf = np.empty(n)
        for r in range(n):
            fr = keep[r]
            b = rhs[fr]
            for s in range(n):
                Af[r, s] = M[fr, keep[s]]
            if fr >= 6:
                j = fr - 6
                if fixed[j]:
                    b += tau[j]
                else:
                    g = kd[j] + dt * kp[j]
                    Af[r, r] += dt * g
                    b += kp[j] * (u[j] - q[7 + j]) - g * v[fr]
            b *= dt
            # known velocity changes of locked joints move to the right-hand side
            for s in range(nq):
                if locked[s]:
                    b -= M[fr, 6 + s] * (v_lock[s] - v[6 + s])
            bf[r] = b
        dv = _spd_solve(Af, bf)
        for r in range(n):
            v_next[keep[r]] = v[keep[r]] + dv[r]
        changed = False
        for j in range(nq):
            if locked[j]:
                continue
            qn = q[7 + j] + dt * v_next[6 + j]
            if qn > upper[j] or qn < lower[j]:
                bound = upper[j] if qn > upper[j] else lower[j]
                locked[j] = True
                v_lock[j] = (bound - q[7 + j]) / dt
                changed = True
        if changed:
            continue
        for j in range(nq):
            if fixed[j]:
                continue
            t = kp[j] * (u[j] - q[7 + j]) - (kd[j] + dt * kp[j]) * v_next[6 + j]
            if t > effort[j]:
                tau[j] = effort[j]
                fixed[j] = True
                changed = True
            elif t < -effort[j]:
                tau[j] = -effort[j]
                fixed[j] = True
                changed = True
            else:
                tau[j] = t
        if not changed:
            break
    for r in range(nv):
        if not math.isfinite(v_next[r]):
            return q.copy(), v.copy(), tau, STATUS_NONFINITE_VELOCITY
    q_next = integrate_config(q, v_next, dt)
    for j in range(nq):
        if locked[j]:
            # landed on the limit: stop there rather than bounce
            q_next[7 + j] = upper[j] if v_lock[j] * dt + q[7 + j] >= upper[j] else lower[j]
            v_next[6 + j] = 0.0
        elif q_next[7 + j] > upper[j]:
            q_next[7 + j] = upper[j]
            if v_next[6 + j] > 0.0:
                v_next[6 + j] = 0.0
        elif q_next[7 + j] < lower[j]:
            q_next[7 + j] = lower[j]
            if v_next[6 + j] < 0.0:
                v_next[6 + j] = 0.0
    for r in range(q_next.shape[0]):
        if not math.isfinite(q_next[r]):
            return q.copy(), v.copy(), tau, STATUS_NONFINITE_CONFIGURATION
    return q_next, v_next, tau, STATUS_OK


@njit(**_JIT)
def _spd_solve(A, b):
    """Cholesky solve; falls back to NaN (caught by the caller) if A is not SPD."""
    n = b.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            out = np.empty(n)
            out[:] = np.nan
            return out
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(**_JIT)
def rollout(parent, axis, trans, rot, mass, com, inertia, gravity,
            lower, upper, effort, free_idx, clinks, coffsets,
            q0, v0, U, mode, kp, kd, dt, substeps,
            stiffness, damping, ground, mu, vreg):
    """Hold each control row for ``substeps`` physics steps.

    Returns (Q, V, status, failing control index); Q and V have len(U) + 1 rows.
    """
    T = U.shape[0]
    Q = np.empty((T + 1, q0.shape[0]))
    V = np.empty((T + 1, v0.shape[0]))
    Q[0] = q0
    V[0] = v0
    q = q0.copy()
    v = v0.copy()
    h = dt / substeps
    for t in range(T):
        for _ in range(substeps):
            q, v, tau, status = step(parent, axis, trans, rot, mass, com, inertia, gravity,
                                     lower, upper, effort, free_idx, clinks, coffsets,
                                     q, v, U[t], mode, kp, kd, h,
                                     stiffness, damping, ground, mu, vreg)
            if status != STATUS_OK:
                return Q[: t + 1], V[: t + 1], status, t
        Q[t + 1] = q
        V[t + 1] = v
    return Q, V, STATUS_OK, -1


@njit(**_JIT)
def points_and_jacobian(parent, axis, trans, rot, q, links, offsets):
    """World positions (n x 3) and Jacobians (n x 3 x nv) of attached points."""
    nl = parent.shape[0]
    R = np.empty((nl, 3, 3))
    P = np.empty((nl, 3))
    Z = np.empty((nl, 3))
    poses_into(parent, axis, trans, rot, q, R, P, Z)
    X = world_points(R, P, links, offsets)
    n = links.shape[0]
    J = np.empty((n, 3, 5 + nl))
    for k in range(n):
        point_jacobian_into(parent, R, P, Z, links[k], X[k], J[k])
    return X, J
