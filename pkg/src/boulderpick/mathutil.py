"""Batched quaternion and small-matrix helpers.

All rotations use unit quaternions in (w, x, y, z) order, float64.
Every op is written elementwise on purpose: the physics stepping path
must produce bit-identical results regardless of thread count, so we
avoid BLAS-backed reductions (matmul/einsum) on the hot path.
"""

from __future__ import annotations

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.sqrt(q[..., 0] ** 2 + q[..., 1] ** 2 + q[..., 2] ** 2 + q[..., 3] ** 2)
    return q / n[..., None]


def quat_mul(a, b):
    """Hamilton product a*b, batched over leading dims."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    out = np.array(q, dtype=np.float64, copy=True)
    out[..., 1:] *= -1.0
    return out


def quat_rotate(q, v):
    """Rotate vectors v by quaternions q (elementwise, no matmul)."""
    qw = q[..., 0]
    qx, qy, qz = q[..., 1], q[..., 2], q[..., 3]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    # t = 2 q_vec x v
    tx = 2.0 * (qy * vz - qz * vy)
    ty = 2.0 * (qz * vx - qx * vz)
    tz = 2.0 * (qx * vy - qy * vx)
    # v' = v + qw t + q_vec x t
    rx = vx + qw * tx + qy * tz - qz * ty
    ry = vy + qw * ty + qz * tx - qx * tz
    rz = vz + qw * tz + qx * ty - qy * tx
    return np.stack([rx, ry, rz], axis=-1)


def quat_rotate_inv(q, v):
    return quat_rotate(quat_conj(q), v)


def quat_to_mat(q):
    """Rotation matrices (..., 3, 3) from quaternions."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle
    s = np.sin(half)
    return np.stack(
        [np.cos(half), axis[..., 0] * s, axis[..., 1] * s, axis[..., 2] * s],
        axis=-1,
    )


def quat_integrate(q, omega, dt):
    """One explicit step of dq/dt = 0.5 * omega_quat * q, then renormalize."""
    ow, ox, oy, oz = 0.0, omega[..., 0], omega[..., 1], omega[..., 2]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    dw = -ox * qx - oy * qy - oz * qz
    dx = ow * qx + ox * qw + oy * qz - oz * qy
    dy = qy * ow + oy * qw + oz * qx - ox * qz
    dz = qz * ow + oz * qw + ox * qy - oy * qx
    out = np.stack(
        [qw + 0.5 * dt * dw, qx + 0.5 * dt * dx, qy + 0.5 * dt * dy, qz + 0.5 * dt * dz],
        axis=-1,
    )
    return quat_normalize(out)


def rotz_apply(theta, v):
    """Apply R_z(theta) to vectors, batched. theta (...,), v (...,3)."""
    c, s = np.cos(theta), np.sin(theta)
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([c * vx - s * vy, s * vx + c * vy, vz], axis=-1)


def rotz_apply_inv(theta, v):
    return rotz_apply(-np.asarray(theta, dtype=np.float64), v)


def roty_apply(theta, v):
    c, s = np.cos(theta), np.sin(theta)
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([c * vx + s * vz, vy, -s * vx + c * vz], axis=-1)


def mat_apply(m, v):
    """m (...,3,3) times v (...,3) without calling into BLAS."""
    return np.stack(
        [
            m[..., 0, 0] * v[..., 0] + m[..., 0, 1] * v[..., 1] + m[..., 0, 2] * v[..., 2],
            m[..., 1, 0] * v[..., 0] + m[..., 1, 1] * v[..., 1] + m[..., 1, 2] * v[..., 2],
            m[..., 2, 0] * v[..., 0] + m[..., 2, 1] * v[..., 1] + m[..., 2, 2] * v[..., 2],
        ],
        axis=-1,
    )


def mat_apply_t(m, v):
    """Transpose apply: m^T v, batched."""
    return np.stack(
        [
            m[..., 0, 0] * v[..., 0] + m[..., 1, 0] * v[..., 1] + m[..., 2, 0] * v[..., 2],
            m[..., 0, 1] * v[..., 0] + m[..., 1, 1] * v[..., 1] + m[..., 2, 1] * v[..., 2],
            m[..., 0, 2] * v[..., 0] + m[..., 1, 2] * v[..., 1] + m[..., 2, 2] * v[..., 2],
        ],
        axis=-1,
    )


def mat_mul(a, b):
    """3x3 matrix product, batched, elementwise expansion."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            out[..., i, j] = (
                a[..., i, 0] * b[..., 0, j]
                + a[..., i, 1] * b[..., 1, j]
                + a[..., i, 2] * b[..., 2, j]
            )
    return out


def inv3(a):
    """Batched closed-form 3x3 inverse (adjugate over determinant)."""
    a00, a01, a02 = a[..., 0, 0], a[..., 0, 1], a[..., 0, 2]
    a10, a11, a12 = a[..., 1, 0], a[..., 1, 1], a[..., 1, 2]
    a20, a21, a22 = a[..., 2, 0], a[..., 2, 1], a[..., 2, 2]
    c00 = a11 * a22 - a12 * a21
    c01 = a12 * a20 - a10 * a22
    c02 = a10 * a21 - a11 * a20
    det = a00 * c00 + a01 * c01 + a02 * c02
    out = np.empty_like(a)
    out[..., 0, 0] = c00
    out[..., 1, 0] = c01
    out[..., 2, 0] = c02
    out[..., 0, 1] = a02 * a21 - a01 * a22
    out[..., 1, 1] = a00 * a22 - a02 * a20
    out[..., 2, 1] = a01 * a20 - a00 * a21
    out[..., 0, 2] = a01 * a12 - a02 * a11
    out[..., 1, 2] = a02 * a10 - a00 * a12
    out[..., 2, 2] = a00 * a11 - a01 * a10
    return out / det[..., None, None]


def cross(a, b):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def norm(a):
    return np.sqrt(dot(a, a))
