"""Observation vector layout and normalization.

The vector concatenates proprioception (joint positions, velocities,
torques), the turn channel with its realized-velocity history, the bucket
pose and velocity in the rotating cabin frame, the rock point cloud, and
the previous command with its turn-command history. Every channel is
affinely mapped to [-1, 1] using fixed physical ranges and clamped, so
the layout is stable and a checkpoint can assert it byte for byte.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .config import EnvConfig


class ObsLayout:
    """Named slices plus per-element normalization ranges."""

    def __init__(self, cfg: EnvConfig):
        arm = cfg.arm
        hist = arm.history_len
        q_lo = np.asarray(arm.q_lo)
        q_hi = np.asarray(arm.q_hi)
        qd = np.asarray(arm.qd_max)
        tau = cfg.torque_norm_scale * np.asarray(arm.torque_rating)
        ws = [cfg.workspace_x, cfg.workspace_y, cfg.workspace_z]
        pos_lo = np.array([b[0] for b in ws])
        pos_hi = np.array([b[1] for b in ws])
        cloud_pts = cfg.sensor.n_cloud_points

        blocks = [
            ("joint_pos", q_lo, q_hi),
            ("joint_vel", -qd, qd),
            ("joint_torque", -tau, tau),
            ("turn_pos", q_lo[:1], q_hi[:1]),
            ("turn_vel_hist", np.full(hist, -qd[0]), np.full(hist, qd[0])),
            ("bucket_pos", pos_lo, pos_hi),
            ("bucket_quat", -np.ones(4), np.ones(4)),
            ("bucket_linvel", np.full(3, -cfg.bucket_speed_norm),
             np.full(3, cfg.bucket_speed_norm)),
            ("bucket_angvel", np.full(3, -cfg.bucket_omega_norm),
             np.full(3, cfg.bucket_omega_norm)),
            ("cloud", np.tile(pos_lo, cloud_pts), np.tile(pos_hi, cloud_pts)),
            ("prev_action", -np.ones(5), np.ones(5)),
            ("turn_cmd_hist", -np.ones(hist), np.ones(hist)),
        ]
        self.names = [b[0] for b in blocks]
        self.slices = {}
        lo, hi = [], []
        at = 0
        for name, b_lo, b_hi in blocks:
            size = len(b_lo)
            self.slices[name] = slice(at, at + size)
            lo.append(np.asarray(b_lo, dtype=np.float64))
            hi.append(np.asarray(b_hi, dtype=np.float64))
            at += size
        self.size = at
        self.lo = np.concatenate(lo)
        self.hi = np.concatenate(hi)
        self._span = self.hi - self.lo

    def normalize(self, raw):
        """Map raw physical values to [-1, 1], clamped at the range ends."""
        out = 2.0 * (raw - self.lo) / self._span - 1.0
        return np.clip(out, -1.0, 1.0)

    def denormalize(self, obs):
        return self.lo + (obs + 1.0) * 0.5 * self._span

    def descriptor(self) -> dict:
        return {
            "size": self.size,
            "fields": [
                {
                    "name": name,
                    "start": self.slices[name].start,
                    "stop": self.slices[name].stop,
                    "lo": [float(v) for v in self.lo[self.slices[name]]],
                    "hi": [float(v) for v in self.hi[self.slices[name]]],
                }
                for name in self.names
            ],
        }

    def descriptor_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True, separators=(",", ":"))

    @property
    def layout_hash(self) -> str:
        return hashlib.sha256(self.descriptor_json().encode()).hexdigest()
