"""Earthmoving resistance on the bucket edge.

The cutting model is a plane-strain passive wedge ahead of the blade: for
each episode's soil parameters, the horizontal draft follows

    F = w * (gamma d^2 N_gamma + c d N_c + c_a d N_a)

where the N factors come from force equilibrium on a trial wedge and the
failure-plane angle is chosen, per evaluation, as the minimizer over a
fixed grid of candidates in (0, pi/2). Vertical resistance uses a separate
penetration term F_pen = CP (c + gamma d) A_edge that only opposes
downward edge motion.

The arm is kinematic, so these forces never slow the bucket; they exist to
be felt through the static joint torques in the observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SoilConfig, SoilParams
from .mathutil import rotz_apply


@dataclass
class SoilBatch:
    """Per-env soil parameters as flat arrays."""

    cohesion: np.ndarray
    friction_angle: np.ndarray
    unit_weight: np.ndarray
    ext_friction_angle: np.ndarray
    cp: np.ndarray
    adhesion_ratio: np.ndarray
    cut_resist: np.ndarray

    @classmethod
    def from_params(cls, p: SoilParams, n: int):
        full = np.full
        return cls(
            cohesion=full(n, p.cohesion),
            friction_angle=full(n, p.friction_angle),
            unit_weight=full(n, p.unit_weight),
            ext_friction_angle=full(n, p.ext_friction_angle),
            cp=full(n, p.cp),
            adhesion_ratio=full(n, p.adhesion_ratio),
            cut_resist=full(n, p.cut_resist),
        )

    @classmethod
    def sample_between(cls, lo: SoilParams, hi: SoilParams, rng, n: int,
                       cut_resist_range=(0.5, 1.5)):
        """Independent per-parameter interpolation between two soils."""
        def mix(a, b):
            return a + (b - a) * rng.uniform(0.0, 1.0, n)

        return cls(
            cohesion=mix(lo.cohesion, hi.cohesion),
            friction_angle=mix(lo.friction_angle, hi.friction_angle),
            unit_weight=mix(lo.unit_weight, hi.unit_weight),
            ext_friction_angle=mix(lo.ext_friction_angle, hi.ext_friction_angle),
            cp=mix(lo.cp, hi.cp),
            adhesion_ratio=mix(lo.adhesion_ratio, hi.adhesion_ratio),
            cut_resist=rng.uniform(cut_resist_range[0], cut_resist_range[1], n),
        )

    def set_rows(self, idx, other, rows):
        for name in (
            "cohesion", "friction_angle", "unit_weight",
            "ext_friction_angle", "cp", "adhesion_ratio", "cut_resist",
        ):
            getattr(self, name)[idx] = getattr(other, name)[rows]


@dataclass
class CutBatch:
    """Geometry of the cutting interaction in each env's vertical slice."""

    depth: np.ndarray     # edge depth below the surface, >= 0 (m)
    rake: np.ndarray      # clamped blade angle to the surface (rad)
    v_r: np.ndarray       # radial edge velocity in the slice (m/s)
    v_z: np.ndarray       # vertical edge velocity (m/s)
    speed: np.ndarray     # slice speed


def trial_angles(n: int):
    """The fixed failure-plane candidate grid: interior of (0, pi/2)."""
    return np.linspace(0.0, np.pi / 2.0, n + 2)[1:-1]


def wedge_draft(depth, rake, width, soil: SoilBatch, n_angles: int):
    """Horizontal cutting resistance, batched. Zero where depth <= 0.

    Closed form of the per-angle equilibrium: with W the wedge weight,
    L_f/L_b the failure-plane/blade lengths,

      P(beta) = [W sin(beta+phi) + c L_f w cos(phi) - c_a L_b w cos(rho+beta+phi)]
                / sin(rho+beta+phi+delta)

    minimized over valid angles (positive P and failure-plane reaction).
    """
    depth = np.asarray(depth, dtype=np.float64)
    rake = np.asarray(rake, dtype=np.float64)
    betas = trial_angles(n_angles)[None, :]
    d = depth[:, None]
    rho = rake[:, None]
    c = soil.cohesion[:, None]
    ca = (soil.adhesion_ratio * soil.cohesion)[:, None]
    gamma = soil.unit_weight[:, None]
    phi = soil.friction_angle[:, None]
    delta = soil.ext_friction_angle[:, None]

    sin_total = np.sin(rho + betas + phi + delta)
    area = 0.5 * d * d * (1.0 / np.tan(rho) + 1.0 / np.tan(betas))
    weight = gamma * area * width
    coh = c * (d / np.sin(betas)) * width
    adh = ca * (d / np.sin(rho)) * width
    numer = (
        weight * np.sin(betas + phi)
        + coh * np.cos(phi)
        - adh * np.cos(rho + betas + phi)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        p = numer / sin_total
        reaction = (p * np.sin(rho + delta) - coh * np.cos(betas) + adh * np.cos(rho)) / np.sin(
            betas + phi
        )
    valid = (sin_total > 1e-6) & (p > 0.0) & (reaction > 0.0)
    p = np.where(valid, p, np.inf)
    p_min = np.min(p, axis=1)
    any_valid = np.any(valid, axis=1)
    adh_line = soil.adhesion_ratio * soil.cohesion * depth / np.sin(rake) * width
    draft = p_min * np.sin(rake + soil.ext_friction_angle) + adh_line * np.cos(rake)
    draft = np.where(any_valid & (depth > 0.0), draft, 0.0)
    return draft


def penetration_force(depth, soil: SoilBatch, edge_area: float):
    """Vertical penetration resistance magnitude, zero at the surface."""
    depth = np.asarray(depth, dtype=np.float64)
    f = soil.cp * (soil.cohesion + soil.unit_weight * depth) * edge_area
    return np.where(depth > 0.0, f, 0.0)


def excavation_slice(q_turn, chi, edge_pos_w, edge_vel_w, cfg: SoilConfig) -> CutBatch:
    """Project the edge state into each env's vertical working slice."""
    ct, st = np.cos(q_turn), np.sin(q_turn)
    v_r = ct * edge_vel_w[:, 0] + st * edge_vel_w[:, 1]
    v_z = edge_vel_w[:, 2]
    depth = np.maximum(0.0, cfg.surface_z - edge_pos_w[:, 2])
    # blade angle to the surface: digging attitude means the edge is tipped
    # down (chi < 0); flat or curled blades keep the minimum rake
    rake = np.clip(-chi, cfg.rake_min, cfg.rake_max)
    speed = np.sqrt(v_r * v_r + v_z * v_z)
    return CutBatch(depth=depth, rake=rake, v_r=v_r, v_z=v_z, speed=speed)


def soil_force_world(q_turn, cut: CutBatch, soil: SoilBatch, cfg: SoilConfig,
                     width: float, edge_area: float, n_angles: int | None = None):
    """Resisting force on the bucket edge, world frame (N,3).

    Horizontal draft opposes the radial slice motion; the penetration term
    opposes only downward motion. Forces vanish above the surface and below
    the edge-speed gate, so the product with the edge velocity is never
    positive.
    """
    n_angles = cfg.n_trial_angles if n_angles is None else n_angles
    active = (cut.depth > 0.0) & (cut.speed > cfg.speed_gate)
    draft = np.zeros_like(cut.depth)
    if np.any(active):
        draft_a = wedge_draft(cut.depth[active], cut.rake[active], width,
                              _mask_soil(soil, active), n_angles)
        draft[active] = draft_a * soil.cut_resist[active]
    pen = penetration_force(cut.depth, soil, edge_area) * soil.cut_resist
    f_r = -np.sign(cut.v_r) * draft * active
    f_z = np.where(active & (cut.v_z < 0.0), pen, 0.0)
    f_slice = np.stack([f_r, np.zeros_like(f_r), f_z], axis=-1)
    return rotz_apply(q_turn, f_slice)


def _mask_soil(soil: SoilBatch, mask) -> SoilBatch:
    return SoilBatch(
        cohesion=soil.cohesion[mask],
        friction_angle=soil.friction_angle[mask],
        unit_weight=soil.unit_weight[mask],
        ext_friction_angle=soil.ext_friction_angle[mask],
        cp=soil.cp[mask],
        adhesion_ratio=soil.adhesion_ratio[mask],
        cut_resist=soil.cut_resist[mask],
    )
