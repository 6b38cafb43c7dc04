"""Collision-free episode start states, sampled once and reused.

Producing a valid start is expensive: the rock must be dropped and settled
to rest, the staged arm must clear the ground and the rock, and the scanner
must actually see the rock from the staged cabin heading. Each curriculum
level therefore gets a disk cache of (arm pose, rock row, rock pose)
tuples built by rejection sampling and keyed by (level, dataset hash,
seed). Quantities that do not affect validity (actuation delay, friction,
mass scale, soil condition) are sampled fresh at reset time, never cached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arm import ArmModel
from .config import EnvConfig, LevelConfig
from .mathutil import mat_apply_t
from .physics import RockStateBatch, settle_rocks
from .rockgen import RockSet
from .sensor import Lidar, face_planes


@dataclass
class ResetCache:
    level: int
    q: np.ndarray          # (C,5) staged arm joints
    rock_row: np.ndarray   # (C,) dataset row
    rock_pos: np.ndarray   # (C,3) settled rock position
    rock_quat: np.ndarray  # (C,4) settled rock orientation
    meta: dict

    def __len__(self) -> int:
        return self.q.shape[0]

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            q=self.q,
            rock_row=self.rock_row,
            rock_pos=self.rock_pos,
            rock_quat=self.rock_quat,
            meta=np.asarray(json.dumps(self.meta, sort_keys=True)),
        )
        path.with_suffix(".json").write_text(json.dumps(self.meta, indent=1))

    @classmethod
    def load(cls, path) -> "ResetCache":
        with np.load(Path(path), allow_pickle=False) as f:
            meta = json.loads(str(f["meta"]))
            return cls(
                level=int(meta["level"]),
                q=f["q"],
                rock_row=f["rock_row"],
                rock_pos=f["rock_pos"],
                rock_quat=f["rock_quat"],
                meta=meta,
            )


def cache_path(cache_dir, level: int, dataset_hash: str, seed: int) -> Path:
    return Path(cache_dir) / f"level{level}_{dataset_hash[:12]}_s{seed}.npz"


def random_quats(rng, n: int) -> np.ndarray:
    """Uniform random rotations as (w,x,y,z) quaternions."""
    u1, u2, u3 = rng.uniform(0.0, 1.0, (3, n))
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    return np.stack(
        [
            a * np.sin(2.0 * np.pi * u2),
            a * np.cos(2.0 * np.pi * u2),
            b * np.sin(2.0 * np.pi * u3),
            b * np.cos(2.0 * np.pi * u3),
        ],
        axis=-1,
    )


def stage_ik(arm: ArmModel, r_e, z_e, chi, tele_frac):
    """Arm joints putting the edge at (r_e, z_e) in the cabin plane with
    pitch chi.

    Plain two-link inverse kinematics after removing the pivot-to-edge
    offset. The telescope is not solved for: tele_frac in [0, 1] picks a
    point inside the extension interval that can close the triangle at
    all, so reach alone never rejects a draw. Returns (qb, qs, tele, qp,
    ok) with ok false where joint limits are violated.
    """
    bc = arm.cfg.bucket
    c, s = np.cos(chi), np.sin(chi)
    off_x = c * (-bc.edge_reach) + s * (-bc.depth)
    off_z = -s * (-bc.edge_reach) + c * (-bc.depth)
    tx = r_e - off_x - arm.boom_pivot[0]
    tz = z_e - off_z - arm.boom_pivot[2]
    a = arm.cfg.boom_length
    d = np.sqrt(tx * tx + tz * tz)
    t_lo = np.maximum(arm.q_lo[3], np.abs(a - d) - arm.cfg.stick_length)
    t_hi = np.minimum(arm.q_hi[3], a + d - arm.cfg.stick_length)
    ok = t_lo <= t_hi
    tele = np.clip(t_lo + (t_hi - t_lo) * tele_frac, arm.q_lo[3], arm.q_hi[3])
    b = arm.cfg.stick_length + tele
    cos_el = (d * d - a * a - b * b) / (2.0 * a * b)
    ok &= np.abs(cos_el) <= 1.0
    qs = np.arccos(np.clip(cos_el, -1.0, 1.0))
    qb = -(np.arctan2(tz, tx) + np.arctan2(b * np.sin(qs), a + b * np.cos(qs)))
    qp = chi - qb - qs
    ok &= (qb >= arm.q_lo[1]) & (qb <= arm.q_hi[1])
    ok &= (qs >= arm.q_lo[2]) & (qs <= arm.q_hi[2])
    ok &= (qp >= arm.q_lo[4]) & (qp <= arm.q_hi[4])
    return qb, qs, tele, qp, ok


def plate_hits(verts_w, vert_mask, centers, rots, halves, thickness, margin=0.0):
    """Rock vertices inside (or within margin of) any bucket plate slab.

    Same slab criterion the contact solver uses, so zero hits here is
    exactly "no bucket contact would be detected".
    """
    hits = np.zeros(verts_w.shape[0], dtype=np.int64)
    for p in range(4):
        u = mat_apply_t(rots[:, p][:, None, :, :], verts_w - centers[:, p][:, None, :])
        hx, hy = halves[p]
        inside = (
            vert_mask
            & (np.abs(u[:, :, 0]) <= hx + margin)
            & (np.abs(u[:, :, 1]) <= hy + margin)
            & (u[:, :, 2] <= margin)
            & (u[:, :, 2] >= -thickness - margin)
        )
        hits += inside.sum(axis=1)
    return hits


def _plate_min_z(frames, halves, thickness):
    """Lowest material point over the four plate slabs, per env."""
    centers = frames.plate_centers_w
    rots = frames.plate_rots_w
    zmin = np.full(centers.shape[0], np.inf)
    for p in range(4):
        dx = np.abs(rots[:, p, 2, 0]) * halves[p, 0]
        dy = np.abs(rots[:, p, 2, 1]) * halves[p, 1]
        below = np.maximum(0.0, thickness * rots[:, p, 2, 2])
        zmin = np.minimum(zmin, centers[:, p, 2] - dx - dy - below)
    return zmin


def build_cache(
    cfg: EnvConfig,
    level_idx: int,
    rset: RockSet,
    seed: int,
    size: int | None = None,
    rows=None,
    batch: int = 512,
) -> ResetCache:
    """Rejection-sample `size` valid start states for one curriculum level.

    rows restricts the rock dataset rows to draw from (default: the train
    split). Raises if the acceptance rate collapses, which indicates the
    placement bands and validity checks no longer overlap.
    """
    level: LevelConfig = cfg.curriculum.levels[level_idx]
    rcfg = cfg.reset
    size = rcfg.cache_size if size is None else size
    rows = rset.indices(split="train") if rows is None else np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("no dataset rows to sample from")

    arm = ArmModel(cfg.arm)
    lidar = Lidar(cfg.sensor)
    normals, offsets = face_planes(rset)
    settle_steps = int(round(rcfg.settle_time / cfg.timing.dt_phys))
    rng = np.random.default_rng([seed, level_idx])

    kept_q, kept_row, kept_pos, kept_quat = [], [], [], []
    accepted = 0
    trials = 0
    while accepted < size:
        b = batch
        trials += b
        rrows = rows[rng.integers(0, len(rows), b)]
        r_e = rng.uniform(rcfg.edge_radial[0], rcfg.edge_radial[1], b)
        z_e = rng.uniform(rcfg.edge_height[0], rcfg.edge_height[1], b)
        chi = rng.uniform(rcfg.stage_chi[0], rcfg.stage_chi[1], b)
        tele_frac = rng.uniform(0.0, 1.0, b)
        if level.absolute_placement:
            rx = rng.uniform(level.region_radial[0], level.region_radial[1], b)
            ry = rng.uniform(-level.region_lateral, level.region_lateral, b)
            turn = np.clip(
                np.arctan2(ry, rx) + rng.uniform(-rcfg.stage_bearing, rcfg.stage_bearing, b),
                -rcfg.turn_range,
                rcfg.turn_range,
            )
            rock_x, rock_y = rx, ry
        else:
            turn = rng.uniform(-rcfg.turn_range, rcfg.turn_range, b)
            ahead = rng.uniform(level.rock_ahead[0], level.rock_ahead[1], b)
            lat = rng.uniform(-level.rock_lateral, level.rock_lateral, b)
            x_loc = r_e + ahead
            ct, st_ = np.cos(turn), np.sin(turn)
            rock_x = x_loc * ct - lat * st_
            rock_y = x_loc * st_ + lat * ct
        drop = rng.uniform(0.0, level.rock_drop, b)
        quat0 = random_quats(rng, b)

        # settling dominates the cost, so run the arm-only checks first and
        # settle just the survivors
        qb, qs, tele, qp, ok = stage_ik(arm, r_e, z_e, chi, tele_frac)
        q = np.stack([turn, qb, qs, tele, qp], axis=-1)
        frames = arm.fk(q)
        bc = cfg.arm.bucket
        ok &= _plate_min_z(frames, arm.plate_halves, bc.plate_thickness) >= rcfg.min_edge_clearance
        pre = np.flatnonzero(ok)
        if len(pre) == 0:
            continue
        k = len(pre)
        rrows, turn, r_e, drop = rrows[pre], turn[pre], r_e[pre], drop[pre]
        q, quat0 = q[pre], quat0[pre]
        frames = arm.fk(q)

        st = RockStateBatch.allocate(k, rset.verts.shape[1])
        st.load_rocks(np.arange(k), rset, rrows, np.ones(k))
        st.pos[:, 0] = rock_x[pre]
        st.pos[:, 1] = rock_y[pre]
        st.pos[:, 2] = st.bound_radius + 0.05 + drop
        st.quat[:] = quat0
        settle_rocks(st, cfg.timing.dt_phys, cfg.physics, settle_steps)

        speed = np.sqrt(np.sum(st.linvel * st.linvel, axis=-1)) + np.sqrt(
            np.sum(st.angvel * st.angvel, axis=-1)
        )
        ok = ~st.fault & (speed < rcfg.settle_vel_tol) & (st.pos[:, 2] > 0.0)

        # the rock may roll while settling; keep only ones still in the box
        ct, st_ = np.cos(turn), np.sin(turn)
        x_loc = ct * st.pos[:, 0] + st_ * st.pos[:, 1]
        y_loc = -st_ * st.pos[:, 0] + ct * st.pos[:, 1]
        if level.absolute_placement:
            ok &= (
                (st.pos[:, 0] >= level.region_radial[0])
                & (st.pos[:, 0] <= level.region_radial[1])
                & (np.abs(st.pos[:, 1]) <= level.region_lateral)
            )
        else:
            ok &= (
                (x_loc - r_e >= level.rock_ahead[0])
                & (x_loc - r_e <= level.rock_ahead[1])
                & (np.abs(y_loc) <= level.rock_lateral)
            )

        hits = plate_hits(
            st.world_verts(),
            st.vert_mask,
            frames.plate_centers_w,
            frames.plate_rots_w,
            arm.plate_halves,
            bc.plate_thickness,
            margin=rcfg.min_rock_gap,
        )
        ok &= hits == 0

        # the rock must be inside the scanner's field of view from the
        # staged heading; the bucket's own shadow is transient (the arm
        # moves immediately) so plates are left out here
        _, counts = lidar.scan(
            turn, st.pos, st.quat, rrows,
            normals, offsets, rset.bound_radius,
        )
        ok &= counts > 0

        idx = np.flatnonzero(ok)
        kept_q.append(q[idx])
        kept_row.append(rrows[idx])
        kept_pos.append(st.pos[idx].copy())
        kept_quat.append(st.quat[idx].copy())
        accepted += len(idx)
        if trials >= 4 * batch and accepted < rcfg.min_accept_rate * trials:
            raise RuntimeError(
                f"start-state sampling accepts {accepted}/{trials}; placement "
                "bands and validity checks barely overlap for level "
                f"{level_idx}"
            )

    meta = {
        "level": level_idx,
        "dataset_hash": rset.dataset_hash,
        "seed": seed,
        "size": size,
        "accept_rate": accepted / trials,
        "rows": [int(r) for r in rows],
    }
    return ResetCache(
        level=level_idx,
        q=np.concatenate(kept_q)[:size],
        rock_row=np.concatenate(kept_row)[:size],
        rock_pos=np.concatenate(kept_pos)[:size],
        rock_quat=np.concatenate(kept_quat)[:size],
        meta=meta,
    )


def load_or_build(cfg: EnvConfig, level_idx: int, rset: RockSet, seed: int,
                  cache_dir, size=None, rows=None) -> ResetCache:
    """Load the keyed cache if present, otherwise build and persist it."""
    path = cache_path(cache_dir, level_idx, rset.dataset_hash, seed)
    if path.exists():
        cache = ResetCache.load(path)
        if cache.meta.get("dataset_hash") != rset.dataset_hash:
            raise RuntimeError(f"cache {path} was built for a different dataset")
        return cache
    cache = build_cache(cfg, level_idx, rset, seed, size=size, rows=rows)
    cache.save(path)
    return cache
