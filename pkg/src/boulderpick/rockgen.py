"""Procedural convex boulder generation and dataset management.

Rocks are convex hulls of noisy sphere samples, scaled anisotropically so
the axis-aligned extents hit sampled targets exactly, then translated so
the center of mass sits at the body origin. Mass properties assume uniform
density and integrate exactly over the polyhedron by signed tetrahedra
against the origin.

A dataset is a directory of OBJ files plus JSON metadata and a manifest
carrying a content hash, so downstream caches can detect a changed or
corrupt dataset.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .config import RockGenConfig


@dataclass
class RockMesh:
    name: str
    verts: np.ndarray        # (V,3) float64, COM at origin
    faces: np.ndarray        # (F,3) int, outward-wound triangles
    volume: float
    mass: float              # at nominal density, before per-episode scaling
    inertia: np.ndarray      # (3,3) about the COM
    extents: np.ndarray      # (3,) axis-aligned sizes
    size_class: str          # small | medium | large
    seed: int = 0

    @property
    def bound_radius(self) -> float:
        v = self.verts
        return float(np.sqrt((v * v).sum(axis=1).max()))


def mesh_mass_properties(verts, faces, density):
    """Exact uniform-density mass properties by signed tetrahedra.

    Each face triangle forms a tetrahedron with the origin; signed volumes
    make the result independent of where the origin sits relative to the
    body. Returns (volume, mass, com, inertia_about_com).
    """
    verts = np.asarray(verts, dtype=np.float64)
    a = verts[faces[:, 0]]
    b = verts[faces[:, 1]]
    c = verts[faces[:, 2]]
    cross = np.cross(b, c)
    vol6 = np.einsum("ij,ij->i", a, cross)  # 6 * signed tet volume
    volume = vol6.sum() / 6.0
    com = ((a + b + c) * vol6[:, None]).sum(axis=0) / (24.0 * volume)
    s = a + b + c
    second = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            second[i, j] = np.sum(
                vol6 / 120.0 * (a[:, i] * a[:, j] + b[:, i] * b[:, j] + c[:, i] * c[:, j]
                                + s[:, i] * s[:, j])
            )
    mass = density * volume
    trace = second[0, 0] + second[1, 1] + second[2, 2]
    inertia_o = density * (np.eye(3) * trace - second)
    r2 = float(com @ com)
    shift = mass * (np.eye(3) * r2 - np.outer(com, com))
    return volume, mass, com, inertia_o - shift


def _oriented_hull(points):
    """Convex hull with all face windings flipped outward."""
    hull = ConvexHull(points)
    verts_idx = hull.vertices
    remap = -np.ones(len(points), dtype=np.int64)
    remap[verts_idx] = np.arange(len(verts_idx))
    verts = points[verts_idx]
    centroid = verts.mean(axis=0)
    faces = []
    for simplex in hull.simplices:
        tri = remap[simplex]
        p0, p1, p2 = verts[tri]
        n = np.cross(p1 - p0, p2 - p0)
        if np.dot(n, p0 - centroid) < 0.0:
            tri = tri[[0, 2, 1]]
        faces.append(tri)
    return verts, np.asarray(faces, dtype=np.int64)


def _lowfreq_noise(dirs, rng, amplitude):
    """Smooth radial modulation in [-amplitude, amplitude]."""
    raw = np.zeros(len(dirs))
    for _ in range(3):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        w1, w2 = rng.uniform(-1.0, 1.0, 2)
        t = dirs @ axis
        raw += w1 * t + w2 * (t * t - 1.0 / 3.0)
    peak = np.abs(raw).max()
    if peak < 1e-12:
        return np.zeros(len(dirs))
    return amplitude * raw / peak


def generate_rock(rng, cfg: RockGenConfig, extents=None, name="rock", seed=0) -> RockMesh:
    """One convex boulder with the requested (or sampled) extents."""
    if extents is None:
        extents = np.array(
            [
                rng.uniform(*cfg.extent_x),
                rng.uniform(*cfg.extent_y),
                rng.uniform(*cfg.extent_z),
            ]
        )
    extents = np.asarray(extents, dtype=np.float64)
    n = int(rng.integers(cfg.n_base_points[0], cfg.n_base_points[1] + 1))
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = 1.0 + _lowfreq_noise(dirs, rng, cfg.noise_amplitude)
    pts = dirs * radii[:, None]
    verts, faces = _oriented_hull(pts)
    span = verts.max(axis=0) - verts.min(axis=0)
    verts = verts * (extents / span)
    volume, mass, com, inertia = mesh_mass_properties(verts, faces, cfg.density)
    verts = verts - com
    if extents[0] <= cfg.small_max_x:
        size_class = "small"
    elif extents[0] >= cfg.large_min_x:
        size_class = "large"
    else:
        size_class = "medium"
    return RockMesh(
        name=name,
        verts=verts,
        faces=faces,
        volume=volume,
        mass=mass,
        inertia=inertia,
        extents=extents,
        size_class=size_class,
        seed=seed,
    )


def mesh_from_points(points, density, name="rock", seed=0) -> RockMesh:
    """Hull + mass properties of caller-supplied points, no rescaling."""
    verts, faces = _oriented_hull(np.asarray(points, dtype=np.float64))
    volume, mass, com, inertia = mesh_mass_properties(verts, faces, density)
    verts = verts - com
    extents = verts.max(axis=0) - verts.min(axis=0)
    if extents[0] <= 0.5:
        size_class = "small"
    elif extents[0] >= 0.8:
        size_class = "large"
    else:
        size_class = "medium"
    return RockMesh(
        name=name, verts=verts, faces=faces, volume=volume, mass=mass,
        inertia=inertia, extents=extents, size_class=size_class, seed=seed,
    )


def rockset_from_meshes(rocks, splits=None) -> "RockSet":
    """Pack in-memory meshes into the padded batch layout (no disk)."""
    splits = ["train"] * len(rocks) if splits is None else splits
    v_max = max(len(r.verts) for r in rocks)
    f_max = max(len(r.faces) for r in rocks)
    m = len(rocks)
    out = RockSet(
        names=[r.name for r in rocks],
        splits=list(splits),
        size_classes=[r.size_class for r in rocks],
        verts=np.zeros((m, v_max, 3)),
        vert_counts=np.zeros(m, dtype=np.int64),
        faces=np.zeros((m, f_max, 3), dtype=np.int64),
        face_mask=np.zeros((m, f_max), dtype=bool),
        mass=np.zeros(m),
        inertia=np.zeros((m, 3, 3)),
        extents=np.zeros((m, 3)),
        bound_radius=np.zeros(m),
        dataset_hash="in-memory",
    )
    for i, rock in enumerate(rocks):
        out.verts[i, : len(rock.verts)] = rock.verts
        out.vert_counts[i] = len(rock.verts)
        out.faces[i, : len(rock.faces)] = rock.faces
        out.face_mask[i, : len(rock.faces)] = True
        out.mass[i] = rock.mass
        out.inertia[i] = rock.inertia
        out.extents[i] = rock.extents
        out.bound_radius[i] = rock.bound_radius
    return out


def sample_dataset(cfg: RockGenConfig, seed: int):
    """The train split plus the held-out large split."""
    rocks = []
    for i in range(cfg.n_train):
        rng = np.random.default_rng([seed, 0, i])
        rocks.append(generate_rock(rng, cfg, name=f"train_{i:03d}", seed=i))
    for i in range(cfg.n_eval_large):
        rng = np.random.default_rng([seed, 1, i])
        extents = np.array(
            [
                rng.uniform(cfg.large_min_x, cfg.extent_x[1]),
                rng.uniform(*cfg.extent_y),
                rng.uniform(*cfg.extent_z),
            ]
        )
        rocks.append(generate_rock(rng, cfg, extents=extents, name=f"heldout_{i:03d}", seed=i))
    splits = ["train"] * cfg.n_train + ["heldout"] * cfg.n_eval_large
    return rocks, splits


def _obj_text(rock: RockMesh) -> str:
    lines = [f"o {rock.name}"]
    for v in rock.verts:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f in rock.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(lines) + "\n"


def _parse_obj(text: str):
    verts, faces, name = [], [], "rock"
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "o":
            name = parts[1]
        elif parts[0] == "v":
            verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return name, np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def save_dataset(rocks, splits, cfg: RockGenConfig, seed: int, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    hasher = hashlib.sha256()
    for rock, split in zip(rocks, splits):
        obj = _obj_text(rock)
        (out / f"{rock.name}.obj").write_text(obj)
        meta = {
            "name": rock.name,
            "split": split,
            "volume": rock.volume,
            "mass": rock.mass,
            "inertia": rock.inertia.tolist(),
            "extents": rock.extents.tolist(),
            "size_class": rock.size_class,
            "seed": rock.seed,
        }
        (out / f"{rock.name}.json").write_text(json.dumps(meta, indent=1))
        hasher.update(obj.encode())
        hasher.update(json.dumps(meta, sort_keys=True).encode())
        entries.append({"obj": f"{rock.name}.obj", "meta": f"{rock.name}.json"})
    manifest = {
        "version": 1,
        "seed": seed,
        "density": cfg.density,
        "count": len(rocks),
        "entries": entries,
        "hash": hasher.hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


@dataclass
class RockSet:
    """A loaded dataset padded into batch-friendly arrays."""

    names: list
    splits: list
    size_classes: list
    verts: np.ndarray        # (M, Vmax, 3), padded with zeros
    vert_counts: np.ndarray  # (M,)
    faces: np.ndarray        # (M, Fmax, 3), padded with 0 and masked
    face_mask: np.ndarray    # (M, Fmax) bool
    mass: np.ndarray         # (M,)
    inertia: np.ndarray      # (M,3,3)
    extents: np.ndarray      # (M,3)
    bound_radius: np.ndarray  # (M,)
    dataset_hash: str = ""

    def indices(self, split=None, size_class=None):
        out = []
        for i in range(len(self.names)):
            if split is not None and self.splits[i] != split:
                continue
            if size_class is not None and self.size_classes[i] != size_class:
                continue
            out.append(i)
        return np.asarray(out, dtype=np.int64)


def load_dataset(path) -> RockSet:
    """Load a saved dataset directory, verifying its manifest hash."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    hasher = hashlib.sha256()
    rocks = []
    for entry in manifest["entries"]:
        obj_text = (root / entry["obj"]).read_text()
        meta = json.loads((root / entry["meta"]).read_text())
        hasher.update(obj_text.encode())
        hasher.update(json.dumps(meta, sort_keys=True).encode())
        name, verts, faces = _parse_obj(obj_text)
        rocks.append((name, verts, faces, meta))
    digest = hasher.hexdigest()
    if digest != manifest["hash"]:
        raise ValueError(f"dataset content hash mismatch under {root}")
    v_max = max(len(r[1]) for r in rocks)
    f_max = max(len(r[2]) for r in rocks)
    m = len(rocks)
    out = RockSet(
        names=[r[0] for r in rocks],
        splits=[r[3]["split"] for r in rocks],
        size_classes=[r[3]["size_class"] for r in rocks],
        verts=np.zeros((m, v_max, 3)),
        vert_counts=np.zeros(m, dtype=np.int64),
        faces=np.zeros((m, f_max, 3), dtype=np.int64),
        face_mask=np.zeros((m, f_max), dtype=bool),
        mass=np.zeros(m),
        inertia=np.zeros((m, 3, 3)),
        extents=np.zeros((m, 3)),
        bound_radius=np.zeros(m),
        dataset_hash=digest,
    )
    for i, (name, verts, faces, meta) in enumerate(rocks):
        out.verts[i, : len(verts)] = verts
        out.vert_counts[i] = len(verts)
        out.faces[i, : len(faces)] = faces
        out.face_mask[i, : len(faces)] = True
        out.mass[i] = meta["mass"]
        out.inertia[i] = np.asarray(meta["inertia"])
        out.extents[i] = np.asarray(meta["extents"])
        out.bound_radius[i] = float(np.sqrt((verts * verts).sum(axis=1).max()))
    return out
