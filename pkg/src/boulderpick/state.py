"""Per-step batch snapshot shared by the reward and termination engines.

Everything is a flat array over the env batch, already expressed in the
frames the scoring rules want: the rotating cabin frame for lateral
alignment and bucket velocity, the fixed base frame (world axes, platform
origin) for heights. Filling this in is the environment's job; the
engines below it stay pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class StepState:
    q: np.ndarray               # (N,5) joint positions
    qd: np.ndarray              # (N,5) realized joint rates
    chi: np.ndarray             # (N,) bucket pitch, + curls the edge up
    bucket_pos_rb: np.ndarray   # (N,3) bucket pivot, rotating cabin frame
    edge_rb: np.ndarray         # (N,3) cutting edge midpoint
    edge_vel_rb: np.ndarray     # (N,3) edge velocity in the cabin frame
    bottom_z: np.ndarray        # (N,) bottom plate center height
    rock_pos_w: np.ndarray      # (N,3) rock com, world
    rock_pos_rb: np.ndarray     # (N,3) rock com, rotating cabin frame
    rock_z_gain: np.ndarray     # (N,) rock height gained since reset
    in_shovel: np.ndarray       # (N,) bool
    in_soil: np.ndarray         # (N,) bool, edge below the surface
    edge_depth: np.ndarray      # (N,) edge depth below the surface, >= 0
    base_vel: np.ndarray        # (N,) platform speed (fixed platform: 0)
    action: np.ndarray          # (N,5) normalized action this step
    prev_action: np.ndarray     # (N,5) previous step's action
    t: np.ndarray               # (N,) episode time after this step
    fault: np.ndarray           # (N,) bool, numerical fault this step

    @property
    def speed_xz(self):
        """Edge speed in the dig plane, used to gate the attack angle."""
        return np.hypot(self.edge_vel_rb[:, 0], self.edge_vel_rb[:, 2])
