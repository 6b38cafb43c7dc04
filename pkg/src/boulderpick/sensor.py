"""Virtual tilted LiDAR on the cabin, and the fixed-size rock point cloud.

The scanner is rigidly mounted on the rotating cabin, so the ray directions
are constants in the cabin frame and the whole scan is computed there. Rays
are tested against

* the boulder, as a convex polytope: entry/exit parameters from the face
  plane half-spaces (exact for convex hulls, no per-triangle work),
* the four bucket plates, which can occlude the boulder,
* implicitly the ground, which lies below the boulder and can never hide it.

Returns that survive occlusion are reduced to a fixed-size cloud by greedy
farthest-point selection seeded at the return closest to the scanner; scans
with too few returns are padded by cycling the returns in ray order.
"""

from __future__ import annotations

import numpy as np

from .config import SensorConfig
from .mathutil import quat_to_mat, rotz_apply

_EPS = 1e-12


def ray_grid(cfg: SensorConfig):
    """Unit ray directions in the cabin frame, azimuth-major, (R,3)."""
    az = np.linspace(cfg.azimuth_range[0], cfg.azimuth_range[1], cfg.n_azimuth)
    el = np.linspace(cfg.elevation_range[0], cfg.elevation_range[1], cfg.n_elevation)
    a, e = np.meshgrid(az, el, indexing="ij")
    a = a.ravel()
    e = e.ravel()
    ce = np.cos(e)
    return np.stack([ce * np.cos(a), ce * np.sin(a), np.sin(e)], axis=-1)


def face_planes(rset):
    """Outward face planes (normals, offsets) per rock row, padded rows inert.

    A point p is inside the hull iff n_f . p <= b_f for every real face.
    Padded faces get n = 0, b = 1 so they never constrain anything.
    """
    m, f_max, _ = rset.faces.shape
    normals = np.zeros((m, f_max, 3))
    offsets = np.ones((m, f_max))
    for i in range(m):
        nf = int(rset.face_mask[i].sum())
        tri = rset.faces[i, :nf]
        v = rset.verts[i]
        a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        normals[i, :nf] = n
        offsets[i, :nf] = np.einsum("ij,ij->i", n, a)
    return normals, offsets


class Lidar:
    """Batched scanner: boulder returns in the cabin frame."""

    def __init__(self, cfg: SensorConfig):
        self.cfg = cfg
        self.origin = np.asarray(cfg.mount_pos, dtype=np.float64)
        self.dirs = ray_grid(cfg)

    def scan(self, turn, rock_pos_w, rock_quat_w, rock_rows,
             plane_normals, plane_offsets, bound_radius,
             plate_centers_w=None, plate_rots_w=None, plate_halves=None):
        """Boulder surface returns for every env.

        turn (N,), rock pose in world, rock_rows (N,) dataset rows,
        plane_normals/offsets the face_planes() arrays, bound_radius (M,).
        Optional bucket plates occlude. Returns (points, counts):
        points (N, R, 3) cabin-frame hits packed to the front in ray order,
        counts (N,) how many are real.
        """
        turn = np.asarray(turn, dtype=np.float64)
        n = turn.shape[0]
        r = self.dirs.shape[0]
        o = self.origin

        # rock pose in the cabin frame
        c_cab = rotz_apply(-turn, rock_pos_w)
        rot_w = quat_to_mat(np.asarray(rock_quat_w, dtype=np.float64))
        ct, st = np.cos(turn), np.sin(turn)
        rz_t = np.zeros((n, 3, 3))
        rz_t[:, 0, 0] = ct
        rz_t[:, 0, 1] = st
        rz_t[:, 1, 0] = -st
        rz_t[:, 1, 1] = ct
        rz_t[:, 2, 2] = 1.0
        rot_cab = np.einsum("nab,nbc->nac", rz_t, rot_w)

        # sphere cull: keep rays whose closest approach to the center is
        # inside the bounding radius (with a safety margin for the test's
        # strict equality against the uncalled path)
        oc = c_cab - o
        oc_d = np.einsum("ij,kj->ik", oc, self.dirs)  # (N,R)
        oc2 = np.einsum("ij,ij->i", oc, oc)[:, None]
        perp2 = oc2 - oc_d * oc_d
        rad = bound_radius[rock_rows] + 1e-6
        cand = (perp2 <= (rad * rad)[:, None]) & (oc_d > 0.0)

        points = np.zeros((n, r, 3))
        counts = np.zeros(n, dtype=np.int64)
        have_plates = plate_centers_w is not None
        if have_plates:
            pc_cab = rotz_apply(-turn[:, None], plate_centers_w)
            pr_cab = np.einsum("nab,npbc->npac", rz_t, plate_rots_w)

        for i in range(n):
            rays = np.nonzero(cand[i])[0]
            if rays.size == 0:
                continue
            d_cab = self.dirs[rays]                   # (K,3)
            rr = rot_cab[i]
            d_loc = np.einsum("kj,jl->kl", d_cab, rr)  # R^T d
            o_loc = np.einsum("j,jl->l", o - c_cab[i], rr)
            nrm = plane_normals[rock_rows[i]]         # (F,3)
            off = plane_offsets[rock_rows[i]]         # (F,)
            denom = np.einsum("kj,fj->kf", d_loc, nrm)  # (K,F)
            num = off[None, :] - np.einsum("j,fj->f", o_loc, nrm)[None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_face = num / denom
            entering = denom < -_EPS
            exiting = denom > _EPS
            t0 = np.max(np.where(entering, t_face, -np.inf), axis=1)
            t1 = np.min(np.where(exiting, t_face, np.inf), axis=1)
            blocked = np.any((np.abs(denom) <= _EPS) & (num < 0.0), axis=1)
            t0 = np.maximum(t0, 0.0)
            hit = (~blocked) & (t0 <= t1) & np.isfinite(t0) & (t0 <= self.cfg.max_range)

            if have_plates and np.any(hit):
                t_occ = np.full(rays.shape, np.inf)
                for p in range(4):
                    n_p = pr_cab[i, p, :, 2]
                    dn = np.einsum("kj,j->k", d_cab, n_p)
                    safe = np.abs(dn) > _EPS
                    c_n = float(np.sum((pc_cab[i, p] - o) * n_p))
                    tp = np.where(safe, c_n / np.where(safe, dn, 1.0), np.inf)
                    pt = o + tp[:, None] * d_cab - pc_cab[i, p]
                    u = np.einsum("kj,j->k", pt, pr_cab[i, p, :, 0])
                    v = np.einsum("kj,j->k", pt, pr_cab[i, p, :, 1])
                    on = (tp >= 0.0) & (np.abs(u) <= plate_halves[p, 0]) & (
                        np.abs(v) <= plate_halves[p, 1])
                    t_occ = np.where(safe & on, np.minimum(t_occ, tp), t_occ)
                hit &= t0 <= t_occ

            k = int(hit.sum())
            if k:
                points[i, :k] = o + t0[hit, None] * d_cab[hit]
                counts[i] = k
        return points, counts


def downsample_cloud(points, count, origin, k):
    """Reduce one scan's returns to exactly k points.

    Greedy farthest-point selection seeded at the return nearest to the
    scanner origin; short scans are padded by cycling the returns in ray
    order. Returns None when the scan is empty.
    """
    m = int(count)
    if m == 0:
        return None
    pts = points[:m]
    if m <= k:
        return pts[np.arange(k) % m]
    rel = pts - np.asarray(origin, dtype=np.float64)
    first = int(np.argmin(np.einsum("ij,ij->i", rel, rel)))
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    delta = pts - pts[first]
    dist = np.einsum("ij,ij->i", delta, delta)
    for j in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[j] = nxt
        delta = pts - pts[nxt]
        dist = np.minimum(dist, np.einsum("ij,ij->i", delta, delta))
    return pts[chosen]


def cloud_batch(points, counts, origin, k, prev_cloud):
    """Fixed-size clouds for every env, holding the last cloud when empty.

    prev_cloud (N,k,3) is updated in place; returns (cloud, valid) where
    valid flags envs whose scan produced at least one return.
    """
    n = counts.shape[0]
    valid = counts > 0
    for i in range(n):
        c = downsample_cloud(points[i], counts[i], origin, k)
        if c is not None:
            prev_cloud[i] = c
    return prev_cloud, valid
