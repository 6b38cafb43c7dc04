"""Rigid rock dynamics against the ground plane and kinematic bucket plates.

One rock per env, stepped with semi-implicit Euler and penalty contacts:

* contact points are mesh vertices penetrating the ground plane or one of
  the four bucket plate slabs (two-sided, resolved toward the nearer face)
* the normal force is a spring-damper per contact, critically damped
  against the per-contact share of the rock mass, never attractive
* friction acts at the impulse level: the tangential impulse is the
  smaller of the Coulomb bound mu*J_n and the impulse that would stop the
  contact point's tangential slip, so the cone holds and slip never
  reverses within a substep
* restitution is zero by construction (no stored rebound term)
* a rolling-resistance torque stands in for the dissipation of a finite
  contact patch: point contacts alone would let convex rocks rock and
  creep indefinitely. It opposes the angular velocity with magnitude
  rolling_resistance * (total normal impulse), capped so it can stop but
  never reverse the rotation.

The configured spring stiffness is a ceiling: per contact it is reduced to
keep the penalty frequency inside the explicit integrator's stable region
for light rocks (omega * dt <= stiff_freq_cap).

Bucket plates are kinematic with effectively infinite mass; their surface
velocities come from finite differences of the plate transforms, and the
reaction impulses are accumulated into a wrench on the bucket so the arm
can expose load torques.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import plate_point_velocity
from .config import PhysicsConfig
from .mathutil import cross, dot, inv3, mat_apply, mat_apply_t, mat_mul, quat_integrate, quat_rotate, quat_to_mat
from .rockgen import RockSet


@dataclass
class RockStateBatch:
    """Struct-of-arrays rigid body state for N rocks."""

    pos: np.ndarray       # (N,3)
    quat: np.ndarray      # (N,4) w,x,y,z
    linvel: np.ndarray    # (N,3)
    angvel: np.ndarray    # (N,3)
    mass: np.ndarray      # (N,) after per-episode scaling
    inv_mass: np.ndarray
    inertia_body: np.ndarray      # (N,3,3)
    inv_inertia_body: np.ndarray  # (N,3,3)
    mu: np.ndarray        # (N,) rock-surface friction coefficient
    verts_body: np.ndarray  # (N,V,3) gathered per-env mesh, COM at origin
    vert_mask: np.ndarray   # (N,V)
    bound_radius: np.ndarray
    rock_index: np.ndarray  # (N,) row into the dataset
    fault: np.ndarray       # (N,) non-finite state seen this episode

    @classmethod
    def allocate(cls, n: int, v_max: int):
        return cls(
            pos=np.zeros((n, 3)),
            quat=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
            linvel=np.zeros((n, 3)),
            angvel=np.zeros((n, 3)),
            mass=np.ones(n),
            inv_mass=np.ones(n),
            inertia_body=np.tile(np.eye(3), (n, 1, 1)),
            inv_inertia_body=np.tile(np.eye(3), (n, 1, 1)),
            mu=np.full(n, 0.5),
            verts_body=np.zeros((n, v_max, 3)),
            vert_mask=np.zeros((n, v_max), dtype=bool),
            bound_radius=np.ones(n),
            rock_index=np.zeros(n, dtype=np.int64),
            fault=np.zeros(n, dtype=bool),
        )

    def load_rocks(self, idx, rocks: RockSet, rock_rows, mass_scale):
        """(Re)materialize dataset rocks into the given env slots."""
        rows = np.asarray(rock_rows, dtype=np.int64)
        self.rock_index[idx] = rows
        scale = np.asarray(mass_scale, dtype=np.float64)
        self.mass[idx] = rocks.mass[rows] * scale
        self.inv_mass[idx] = 1.0 / self.mass[idx]
        self.inertia_body[idx] = rocks.inertia[rows] * scale[..., None, None]
        self.inv_inertia_body[idx] = inv3(self.inertia_body[idx])
        self.verts_body[idx] = rocks.verts[rows]
        self.vert_mask[idx] = False
        counts = rocks.vert_counts[rows]
        v_max = self.verts_body.shape[1]
        self.vert_mask[idx] = np.arange(v_max)[None, :] < counts[:, None]
        self.bound_radius[idx] = rocks.bound_radius[rows]

    def world_verts(self):
        return self.pos[:, None, :] + quat_rotate(self.quat[:, None, :], self.verts_body)


@dataclass
class PlateKinematics:
    """Bucket plate transforms at the current and previous substep."""

    centers: np.ndarray   # (N,4,3)
    rots: np.ndarray      # (N,4,3,3) columns = plate x,y,z(interior normal)
    halves: np.ndarray    # (4,2)
    thickness: float
    prev_centers: np.ndarray = field(default=None)
    prev_rots: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.prev_centers is None:
            self.prev_centers = self.centers.copy()
            self.prev_rots = self.rots.copy()

    def advance(self, centers, rots):
        """Install new transforms; the old ones become the previous step."""
        self.prev_centers = self.centers
        self.prev_rots = self.rots
        self.centers = centers
        self.rots = rots


@dataclass
class ContactReport:
    """Per-env aggregates from one substep's contact resolution."""

    n_contacts: np.ndarray       # (N,)
    bucket_force: np.ndarray     # (N,3) force on the bucket from the rock
    bucket_torque: np.ndarray    # (N,3) about the given pivot
    max_penetration: np.ndarray  # (N,)


def step_rock(state: RockStateBatch, plates: PlateKinematics, pivot_w,
              dt: float, cfg: PhysicsConfig) -> ContactReport:
    """One physics substep: gravity, contacts, integration."""
    n, v_max = state.vert_mask.shape
    state.linvel[:, 2] -= cfg.gravity * dt

    verts_w = state.world_verts()
    r_arm = verts_w - state.pos[:, None, :]

    # gyroscopic torque, explicit
    r_mat = quat_to_mat(state.quat)
    inv_inertia_w = mat_mul(r_mat, mat_mul(state.inv_inertia_body, _transpose3(r_mat)))
    inertia_w = mat_mul(r_mat, mat_mul(state.inertia_body, _transpose3(r_mat)))
    ang_mom = mat_apply(inertia_w, state.angvel)
    gyro = cross(state.angvel, ang_mom)
    state.angvel -= dt * mat_apply(inv_inertia_w, gyro)

    # --- collect candidate contacts --------------------------------------
    pen_list = []
    normal_list = []
    active_list = []
    surf_vel_list = []
    plate_slot = []  # -1 ground, else plate row

    active_g = state.vert_mask & (verts_w[:, :, 2] < cfg.ground_z)
    pen_g = np.where(active_g, cfg.ground_z - verts_w[:, :, 2], 0.0)
    pen_list.append(pen_g)
    normal_list.append(np.broadcast_to(np.array([0.0, 0.0, 1.0]), (n, v_max, 3)))
    active_list.append(active_g)
    surf_vel_list.append(None)
    plate_slot.append(-1)

    half_t = 0.5 * plates.thickness
    for p in range(4):
        c_p = plates.centers[:, p][:, None, :]
        r_p = plates.rots[:, p][:, None, :, :]
        u = mat_apply_t(r_p, verts_w - c_p)
        hx, hy = plates.halves[p]
        inside = (
            state.vert_mask
            & (np.abs(u[:, :, 0]) <= hx)
            & (np.abs(u[:, :, 1]) <= hy)
            & (u[:, :, 2] <= 0.0)
            & (u[:, :, 2] >= -plates.thickness)
        )
        toward_interior = u[:, :, 2] >= -half_t
        pen = np.where(toward_interior, -u[:, :, 2], u[:, :, 2] + plates.thickness)
        n_col = np.stack([r_p[:, :, 0, 2], r_p[:, :, 1, 2], r_p[:, :, 2, 2]], axis=-1)
        normal = np.where(toward_interior[:, :, None], n_col, -n_col)
        if np.any(inside):
            v_surf = plate_point_velocity(
                c_p, r_p,
                plates.prev_centers[:, p][:, None, :],
                plates.prev_rots[:, p][:, None, :, :],
                verts_w, dt,
            )
            v_surf = np.where(inside[:, :, None], v_surf, 0.0)
        else:
            v_surf = None
        pen_list.append(np.where(inside, pen, 0.0))
        normal_list.append(normal)
        active_list.append(inside)
        surf_vel_list.append(v_surf)
        plate_slot.append(p)

    n_contacts = np.zeros(n, dtype=np.int64)
    for act in active_list:
        n_contacts += np.sum(act, axis=1)
    any_c = n_contacts > 0
    n_safe = np.maximum(n_contacts, 1)

    d_p = np.zeros((n, 3))
    d_l = np.zeros((n, 3))
    j_n_sum = np.zeros(n)
    bucket_force = np.zeros((n, 3))
    bucket_torque = np.zeros((n, 3))
    max_pen = np.zeros(n)

    v_pt = None
    for pen, normal, act, v_surf, slot in zip(
        pen_list, normal_list, active_list, surf_vel_list, plate_slot
    ):
        if not np.any(act):
            continue
        if v_pt is None:
            v_pt = state.linvel[:, None, :] + cross(state.angvel[:, None, :], r_arm)
        v_rel = v_pt if v_surf is None else v_pt - v_surf
        v_n = dot(v_rel, normal)

        # effective mass felt along the normal at this contact point; the
        # rotational term keeps long-lever (rocking) modes inside the same
        # stability margin as straight bouncing
        r_x_n = cross(r_arm, normal)
        ang_n = dot(r_x_n, mat_apply(inv_inertia_w[:, None, :, :], r_x_n))
        m_eff_n = 1.0 / (state.inv_mass[:, None] + ang_n)
        k_c = np.minimum(
            cfg.contact_stiffness,
            m_eff_n * (cfg.stiff_freq_cap / dt) ** 2 / n_safe[:, None],
        )
        # damping is capped by a stop budget shared across the contact set:
        # simultaneous per-contact critical damping would collectively
        # over-brake an approach and bounce the body back with energy gain
        c_c = np.minimum(
            2.0 * np.sqrt(k_c * m_eff_n),
            m_eff_n / (dt * n_safe[:, None]),
        )
        f_n = k_c * pen - c_c * v_n
        f_n = np.maximum(f_n, 0.0)
        j_n = np.where(act, f_n * dt, 0.0)

        v_t = v_rel - v_n[:, :, None] * normal
        vt_mag = np.sqrt(dot(v_t, v_t))
        safe = vt_mag > 1e-12
        t_dir = np.where(safe[:, :, None], -v_t / np.where(safe, vt_mag, 1.0)[:, :, None], 0.0)
        r_x_t = cross(r_arm, t_dir)
        ang_t = dot(r_x_t, mat_apply(inv_inertia_w[:, None, :, :], r_x_t))
        m_eff_t = 1.0 / (state.inv_mass[:, None] + ang_t)
        # the stop bound is shared across the contact set: impulses are
        # applied simultaneously, so per-contact full-stop budgets would
        # collectively over-brake and make slow slip ping-pong
        j_t_mag = np.minimum(state.mu[:, None] * j_n, m_eff_t * vt_mag / n_safe[:, None])
        impulse = j_n[:, :, None] * normal + j_t_mag[:, :, None] * t_dir

        d_p += np.sum(impulse, axis=1)
        d_l += np.sum(cross(r_arm, impulse), axis=1)
        j_n_sum += np.sum(j_n, axis=1)
        max_pen = np.maximum(max_pen, np.max(pen * act, axis=1))
        if slot >= 0:
            f_b = -np.sum(impulse, axis=1) / dt
            bucket_force += f_b
            arm_b = verts_w - np.asarray(pivot_w)[:, None, :]
            bucket_torque += np.sum(cross(arm_b, -impulse), axis=1) / dt

    state.linvel += d_p * state.inv_mass[:, None]
    state.angvel += mat_apply(inv_inertia_w, d_l)

    # rolling resistance against the post-contact angular velocity: shrink
    # omega along itself so the correction is strictly dissipative and can
    # stop, but never reverse or redirect, the rotation
    if cfg.rolling_resistance > 0.0:
        w_mag = np.sqrt(dot(state.angvel, state.angvel))
        spinning = w_mag > 1e-12
        w_hat = state.angvel / np.where(spinning, w_mag, 1.0)[:, None]
        inv_i_along = dot(w_hat, mat_apply(inv_inertia_w, w_hat))
        dw = np.minimum(cfg.rolling_resistance * j_n_sum * inv_i_along, w_mag)
        state.angvel -= np.where(spinning, dw, 0.0)[:, None] * w_hat

    state.pos += state.linvel * dt
    state.quat = quat_integrate(state.quat, state.angvel, dt)

    bad = ~(
        np.isfinite(state.pos).all(axis=1)
        & np.isfinite(state.quat).all(axis=1)
        & np.isfinite(state.linvel).all(axis=1)
        & np.isfinite(state.angvel).all(axis=1)
    )
    if np.any(bad):
        state.fault |= bad
        state.pos[bad] = np.where(np.isfinite(state.pos[bad]), state.pos[bad], 0.0)
        state.quat[bad] = np.array([1.0, 0.0, 0.0, 0.0])
        state.linvel[bad] = 0.0
        state.angvel[bad] = 0.0

    return ContactReport(
        n_contacts=np.where(any_c, n_contacts, 0),
        bucket_force=bucket_force,
        bucket_torque=bucket_torque,
        max_penetration=max_pen,
    )


def settle_rocks(state: RockStateBatch, dt: float, cfg: PhysicsConfig, steps: int):
    """Free settling against the ground only (no plates), used by resets."""
    empty_plates = PlateKinematics(
        centers=np.zeros((state.pos.shape[0], 4, 3)) + np.array([0.0, 0.0, 1e6]),
        rots=np.tile(np.eye(3), (state.pos.shape[0], 4, 1, 1)),
        halves=np.zeros((4, 2)),
        thickness=0.01,
    )
    pivot = np.zeros((state.pos.shape[0], 3))
    for _ in range(steps):
        step_rock(state, empty_plates, pivot, dt, cfg)
    return state


def _transpose3(m):
    return np.swapaxes(m, -1, -2)
