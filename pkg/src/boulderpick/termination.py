"""Episode termination rules.

One success condition (rock secured and lifted) and a set of safety and
progress cutoffs, folded into a single cause code per env:

    0 running   1 timeout        2 base moved      3 joint overspeed
    4 bucket overspeed           5 rock buried     6 bad attack angle
    7 success   8 numerical fault

A numerical fault preempts everything; success preempts the failure
checks; among the failures the faster-moving hazards win, timeout last.
"""

from __future__ import annotations

import numpy as np

from .config import TerminationConfig
from .state import StepState

CAUSE_NAMES = (
    "",
    "timeout",
    "base_moved",
    "joint_overspeed",
    "bucket_overspeed",
    "rock_buried",
    "attack_angle",
    "success",
    "fault",
)


def attack_angle(chi, edge_vel_rb):
    """Signed angle from the bottom plate's edge-ward direction to the
    edge velocity, in the dig plane.

    The bottom plate points toward the cutting edge along
    b = (-cos chi, 0, sin chi) in the cabin frame. Zero means the edge
    moves exactly edge-first; positive means the velocity dips below
    that line, i.e. the flat of the plate presses the ground (tamping)
    instead of the edge cutting it. Dragging a level bucket
    downward-and-inward comes out positive; pulling it up and out, or
    dragging with the edge pitched below the motion, comes out negative.
    """
    chi = np.asarray(chi)
    v = np.asarray(edge_vel_rb)
    bx, bz = -np.cos(chi), np.sin(chi)
    return np.arctan2(v[..., 2] * bx - v[..., 0] * bz, v[..., 0] * bx + v[..., 2] * bz)


def termination_causes(state: StepState, cfg: TerminationConfig, t6_on):
    """Cause code per env, 0 where the episode continues."""
    qd_lim = np.asarray(cfg.qd_max)
    success = (
        state.in_shovel
        & (state.chi > cfg.curl_success)
        & (state.rock_pos_w[:, 2] > cfg.lift_success)
    )
    v = state.edge_vel_rb
    bucket_speed = np.sqrt(v[:, 0] ** 2 + v[:, 1] ** 2 + v[:, 2] ** 2)
    alpha = attack_angle(state.chi, v)
    bad_angle = (
        np.asarray(t6_on)
        & state.in_soil
        & (state.speed_xz > cfg.aoa_speed_gate)
        & (alpha > cfg.alpha_threshold)
    )

    cause = np.zeros(state.q.shape[0], dtype=np.int64)
    cause = np.where(state.t >= cfg.time_limit, 1, cause)
    cause = np.where(bad_angle, 6, cause)
    cause = np.where(state.rock_pos_w[:, 2] < cfg.h_min, 5, cause)
    cause = np.where(bucket_speed > cfg.v_max_term, 4, cause)
    cause = np.where(np.any(np.abs(state.qd) > qd_lim, axis=-1), 3, cause)
    cause = np.where(state.base_vel > cfg.v_max_base, 2, cause)
    cause = np.where(success, 7, cause)
    cause = np.where(state.fault, 8, cause)
    return cause
