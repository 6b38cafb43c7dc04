"""Excavator arm: kinematics, bucket plate geometry, and the command path.

Joint order everywhere is [turn, boom, stick, telescope, pitch]. The turn
joint rotates the cabin about world z; boom, stick, and pitch rotate about
the cabin y axis, so in the rotating cabin frame the whole linkage lives in
the xz plane and the bucket's orientation reduces to one angle

    chi = q_boom + q_stick + q_pitch

measured positive when the cutting edge tips upward (curling): positive
pitch rotates the bucket's local x axis downward, and since the edge sits
on the local -x side it swings up. The telescope is prismatic along the
stick axis.

The arm is kinematic: commanded joint rates integrate directly, clamped to
joint limits. Loads never alter the motion; they only show up in the
static joint torques exposed to the policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ArmConfig
from .mathutil import mat_apply, mat_apply_t, rotz_apply

N_JOINTS = 5


def _plate_locals(bc):
    """Static plate definitions in the bucket frame.

    Returns centers (4,3), rotations (4,3,3), half extents (4,2).
    Plate frames put the interior-pointing normal on the local z axis;
    half extents span the local x/y axes. Order: bottom, back, left, right.
    """
    hw = bc.width / 2.0
    mid_x = (bc.heel_reach - bc.edge_reach) / 2.0
    half_len = (bc.heel_reach + bc.edge_reach) / 2.0
    wall_mid = -bc.depth + bc.wall_height / 2.0
    centers = np.array(
        [
            [mid_x, 0.0, -bc.depth],
            [bc.heel_reach, 0.0, wall_mid],
            [mid_x, -hw, wall_mid],
            [mid_x, hw, wall_mid],
        ]
    )
    ex = np.array([1.0, 0.0, 0.0])
    ey = np.array([0.0, 1.0, 0.0])
    ez = np.array([0.0, 0.0, 1.0])

    def frame(u, v):
        n = np.cross(u, v)
        return np.stack([u, v, n], axis=1)  # columns are plate x, y, z

    rotations = np.stack(
        [
            frame(ex, ey),          # bottom, normal +z
            frame(ez, ey),          # back, normal -x
            frame(ez, ex),          # left wall, normal +y
            frame(ex, ez),          # right wall, normal -y
        ]
    )
    halves = np.array(
        [
            [half_len, hw],
            [bc.wall_height / 2.0, hw],
            [bc.wall_height / 2.0, half_len],
            [half_len, bc.wall_height / 2.0],
        ]
    )
    return centers, rotations, halves


@dataclass
class ArmFrames:
    """Forward kinematics result for a batch of joint vectors."""

    q: np.ndarray            # (N,5) the input
    boom_tip_rb: np.ndarray  # (N,3) rotating cabin frame
    pivot_rb: np.ndarray     # (N,3) bucket pivot
    edge_rb: np.ndarray      # (N,3) cutting edge midpoint
    chi: np.ndarray          # (N,) bucket pitch in the slice, +up
    pivot_w: np.ndarray      # (N,3) world
    edge_w: np.ndarray
    plate_centers_w: np.ndarray  # (N,4,3)
    plate_rots_w: np.ndarray     # (N,4,3,3)

    @property
    def bucket_quat_rb(self):
        """Bucket orientation in the cabin frame as a (w,x,y,z) quaternion.

        The bucket frame is R_y(chi) relative to the cabin: curling the
        edge up by chi pitches the local x axis down by the same angle.
        """
        half = 0.5 * self.chi
        z = np.zeros_like(half)
        return np.stack([np.cos(half), z, np.sin(half), z], axis=-1)


class ArmModel:
    def __init__(self, cfg: ArmConfig):
        self.cfg = cfg
        self.q_lo = np.asarray(cfg.q_lo, dtype=np.float64)
        self.q_hi = np.asarray(cfg.q_hi, dtype=np.float64)
        self.qd_max = np.asarray(cfg.qd_max, dtype=np.float64)
        self.deadband = np.asarray(cfg.deadband, dtype=np.float64)
        self.boom_pivot = np.asarray(cfg.boom_pivot, dtype=np.float64)
        pc, pr, ph = _plate_locals(cfg.bucket)
        self.plate_centers_l = pc
        self.plate_rots_l = pr
        self.plate_halves = ph
        self.edge_local = np.array([-cfg.bucket.edge_reach, 0.0, -cfg.bucket.depth])

    def fk(self, q) -> ArmFrames:
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        qt, qb, qs, ql, qp = (q[:, i] for i in range(5))
        ang2 = qb + qs
        chi = ang2 + qp  # bucket x-axis angle below horizontal == edge curl up
        boom_tip = self.boom_pivot + self.cfg.boom_length * np.stack(
            [np.cos(qb), np.zeros_like(qb), -np.sin(qb)], axis=-1
        )
        reach = self.cfg.stick_length + ql
        pivot = boom_tip + reach[:, None] * np.stack(
            [np.cos(ang2), np.zeros_like(ang2), -np.sin(ang2)], axis=-1
        )
        # bucket frame rotation in the cabin frame: R_y(chi)
        c, s = np.cos(chi), np.sin(chi)
        zeros = np.zeros_like(c)
        ones = np.ones_like(c)
        r_b = np.stack(
            [
                np.stack([c, zeros, s], axis=-1),
                np.stack([zeros, ones, zeros], axis=-1),
                np.stack([-s, zeros, c], axis=-1),
            ],
            axis=-2,
        )
        edge_rb = pivot + mat_apply(r_b, np.broadcast_to(self.edge_local, pivot.shape))
        # world plate transforms: rotate the cabin-frame ones by R_z(turn)
        ct, st = np.cos(qt), np.sin(qt)
        r_z = np.zeros((q.shape[0], 3, 3))
        r_z[:, 0, 0] = ct
        r_z[:, 0, 1] = -st
        r_z[:, 1, 0] = st
        r_z[:, 1, 1] = ct
        r_z[:, 2, 2] = 1.0
        base = _mm(r_z, r_b)
        centers_rb = pivot[:, None, :] + mat_apply(
            r_b[:, None, :, :], np.broadcast_to(self.plate_centers_l, (q.shape[0], 4, 3))
        )
        centers_w = rotz_apply(qt[:, None], centers_rb)
        rots_w = _mm(base[:, None, :, :], np.broadcast_to(self.plate_rots_l, (q.shape[0], 4, 3, 3)))
        return ArmFrames(
            q=q,
            boom_tip_rb=boom_tip,
            pivot_rb=pivot,
            edge_rb=edge_rb,
            chi=chi,
            pivot_w=rotz_apply(qt, pivot),
            edge_w=rotz_apply(qt, edge_rb),
            plate_centers_w=centers_w,
            plate_rots_w=rots_w,
        )

    def apply_deadband(self, rates):
        """Zero any command whose magnitude is inside its joint deadband."""
        rates = np.asarray(rates, dtype=np.float64)
        return np.where(np.abs(rates) < self.deadband, 0.0, rates)

    def integrate_joints(self, q, rates, dt):
        """Advance joints by clamped rates; returns (q_new, realized_rates).

        A joint that runs into a position limit reports a realized rate of
        zero for that step; otherwise the realized rate is the clamped
        command itself.
        """
        rates = np.clip(rates, -self.qd_max, self.qd_max)
        q_raw = q + rates * dt
        q_new = np.clip(q_raw, self.q_lo, self.q_hi)
        realized = np.where(q_new != q_raw, 0.0, rates)
        return q_new, realized

    def joint_torques(self, q, f_ext_w=None, p_app_w=None, tau_ext_w=None):
        """Static holding torques for a batch of configurations.

        Gravity loads from the lumped link masses plus the reaction to an
        optional external wrench (force f_ext_w applied at world point
        p_app_w, torque tau_ext_w) acting on the bucket. Positive torque is
        the effort the actuator spends holding the pose.
        """
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        n = q.shape[0]
        qt, qb, qs, ql, qp = (q[:, i] for i in range(5))
        g = 9.81
        m_boom, m_stick, m_tele, m_bucket = self.cfg.link_masses
        lb, ls = self.cfg.boom_length, self.cfg.stick_length
        a2 = qb + qs
        chi_d = a2 + qp
        bc = self.cfg.bucket
        bx = (bc.heel_reach - bc.edge_reach) / 2.0
        bz = -bc.depth / 2.0
        tau = np.zeros((n, 5))
        # dPE/dq with PE = g * sum(m_l z_l); z never depends on turn or y
        dz_b = -0.5 * lb * np.cos(qb)                       # boom com
        dz_s_qb = -lb * np.cos(qb) - 0.5 * ls * np.cos(a2)  # stick com
        dz_s_qs = -0.5 * ls * np.cos(a2)
        r_t = ls + 0.5 * ql                                 # tele com radius
        dz_t_qb = -lb * np.cos(qb) - r_t * np.cos(a2)
        dz_t_qs = -r_t * np.cos(a2)
        dz_t_ql = -0.5 * np.sin(a2)
        # bucket com at pivot + R_y(chi_d) @ (bx, 0, bz):
        # z = -bx sin(chi) + bz cos(chi)
        dz_k_chi = -bx * np.cos(chi_d) - bz * np.sin(chi_d)
        dz_k_qb = -lb * np.cos(qb) - (ls + ql) * np.cos(a2) + dz_k_chi
        dz_k_qs = -(ls + ql) * np.cos(a2) + dz_k_chi
        dz_k_ql = -np.sin(a2)
        tau[:, 1] = g * (m_boom * dz_b + m_stick * dz_s_qb + m_tele * dz_t_qb + m_bucket * dz_k_qb)
        tau[:, 2] = g * (m_stick * dz_s_qs + m_tele * dz_t_qs + m_bucket * dz_k_qs)
        tau[:, 3] = g * (m_tele * dz_t_ql + m_bucket * dz_k_ql)
        tau[:, 4] = g * m_bucket * dz_k_chi
        if f_ext_w is None:
            return tau

        f = np.asarray(f_ext_w, dtype=np.float64)
        p = np.asarray(p_app_w, dtype=np.float64)
        t_ext = np.zeros((n, 3)) if tau_ext_w is None else np.asarray(tau_ext_w, dtype=np.float64)
        axis_y = np.stack([-np.sin(qt), np.cos(qt), np.zeros_like(qt)], axis=-1)
        o_boom = rotz_apply(qt, np.broadcast_to(self.boom_pivot, (n, 3)))
        frames = self.fk(q)
        o_stick = rotz_apply(qt, frames.boom_tip_rb)
        o_pitch = frames.pivot_w
        tele_dir_rb = np.stack([np.cos(a2), np.zeros_like(a2), -np.sin(a2)], axis=-1)
        tele_dir = rotz_apply(qt, tele_dir_rb)
        z_axis = np.array([0.0, 0.0, 1.0])

        def _rev(axis, origin):
            r = p - origin
            jv = np.stack(
                [
                    axis[:, 1] * r[:, 2] - axis[:, 2] * r[:, 1],
                    axis[:, 2] * r[:, 0] - axis[:, 0] * r[:, 2],
                    axis[:, 0] * r[:, 1] - axis[:, 1] * r[:, 0],
                ],
                axis=-1,
            )
            return _dot3(jv, f) + _dot3(axis, t_ext)

        tau[:, 0] -= _rev(np.broadcast_to(z_axis, (n, 3)), np.zeros((n, 3)))
        tau[:, 1] -= _rev(axis_y, o_boom)
        tau[:, 2] -= _rev(axis_y, o_stick)
        tau[:, 3] -= _dot3(tele_dir, f)
        tau[:, 4] -= _rev(axis_y, o_pitch)
        return tau

    def in_shovel(self, frames: ArmFrames, point_w):
        """COM-in-the-box capture test (boundaries count as inside).

        The box is the plate-bounded volume: bottom plate below, back and
        side plates around, open at the edge plane height upward. A point
        on any face plane is captured.
        """
        bc = self.cfg.bucket
        qt = frames.q[:, 0]
        p_rb = rotz_apply(-qt, np.asarray(point_w, dtype=np.float64))
        rel = p_rb - frames.pivot_rb
        # into the bucket frame: R_y(chi)^T
        c, s = np.cos(frames.chi), np.sin(frames.chi)
        x = c * rel[:, 0] - s * rel[:, 2]
        y = rel[:, 1]
        z = s * rel[:, 0] + c * rel[:, 2]
        return (
            (x >= -bc.edge_reach)
            & (x <= bc.heel_reach)
            & (np.abs(y) <= bc.width / 2.0)
            & (z >= -bc.depth)
            & (z <= -bc.depth + bc.wall_height)
        )


class ActionPipeline:
    """Deadband, transport delay, and turn history for a batch of envs.

    Commands are joint rates in physical units. Each env has a fixed
    per-episode delay of k physics-free control steps: the command returned
    at step t is the one pushed at t-k, with zeros before the episode
    started. k = ceil(delay / dt_control).
    """

    def __init__(self, n_envs: int, arm: ArmModel, dt_control: float):
        self.arm = arm
        self.dt = dt_control
        self.n = n_envs
        self.max_steps = int(np.ceil(arm.cfg.delay_max / dt_control))
        self.ring = np.zeros((n_envs, self.max_steps + 1, N_JOINTS))
        self.head = 0
        self.delay_steps = np.zeros(n_envs, dtype=np.int64)
        self.hist_len = arm.cfg.history_len
        self.turn_cmd_hist = np.zeros((n_envs, self.hist_len))

    def reset_envs(self, idx, delays):
        """Clear state for the given env indices and fix their delays."""
        delays = np.asarray(delays, dtype=np.float64)
        k = np.ceil(delays / self.dt - 1e-12).astype(np.int64)
        if np.any(delays < 0.0) or np.any(k > self.max_steps):
            raise ValueError("delay outside [0, delay_max]")
        self.delay_steps[idx] = k
        self.ring[idx] = 0.0
        self.turn_cmd_hist[idx] = 0.0

    def push(self, rates_db, turn_action_norm):
        """Push post-deadband rates; returns the delayed rates to integrate."""
        self.head = (self.head + 1) % self.ring.shape[1]
        self.ring[:, self.head, :] = rates_db
        slot = (self.head - self.delay_steps) % self.ring.shape[1]
        out = self.ring[np.arange(self.n), slot, :]
        self.turn_cmd_hist[:, :-1] = self.turn_cmd_hist[:, 1:]
        self.turn_cmd_hist[:, -1] = turn_action_norm
        return out


def _mm(a, b):
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            out[..., i, j] = (
                a[..., i, 0] * b[..., 0, j]
                + a[..., i, 1] * b[..., 1, j]
                + a[..., i, 2] * b[..., 2, j]
            )
    return out


def _dot3(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def plate_point_velocity(centers_now, rots_now, centers_prev, rots_prev, p_w, dt):
    """Velocity of plate-fixed material points by finite difference.

    p_w (..., 3) are world points on the plate NOW; their plate-local
    coordinates are mapped through the previous transform to get where the
    same material point was one substep ago.
    """
    local = mat_apply_t(rots_now, p_w - centers_now)
    prev_w = centers_prev + mat_apply(rots_prev, local)
    return (p_w - prev_w) / dt
