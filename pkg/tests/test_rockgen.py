"""Procedural boulder generation: geometry, mass properties, persistence."""

import json

import numpy as np
import pytest

from boulderpick.config import RockGenConfig
from boulderpick.rockgen import (
    generate_rock,
    mesh_from_points,
    mesh_mass_properties,
    rockset_from_meshes,
    sample_dataset,
    save_dataset,
    load_dataset,
)

from oracles import box_inertia_oracle, mesh_mass_oracle


def _cube(side=1.0, density=2500.0):
    s = side / 2.0
    pts = np.array([[x, y, z] for x in (-s, s) for y in (-s, s) for z in (-s, s)], float)
    return mesh_from_points(pts, density=density)


def test_cube_mass_properties_are_exact():
    cube = _cube()
    assert abs(cube.mass - 2500.0) < 1e-9
    _, _, com, _ = mesh_mass_properties(cube.verts, cube.faces, 2500.0)
    np.testing.assert_allclose(com, np.zeros(3), atol=1e-12)
    want = np.diag(box_inertia_oracle(2500.0, 1.0, 1.0, 1.0))
    np.testing.assert_allclose(cube.inertia, want, atol=1e-8)


def test_mass_properties_cross_check_on_random_hulls():
    cfg = RockGenConfig()
    rng = np.random.default_rng(13)
    for i in range(25):
        rock = generate_rock(rng, cfg, name=f"r{i}", seed=i)
        vol, mass, com, inertia = mesh_mass_properties(rock.verts, rock.faces, cfg.density)
        mass_o, com_o, inertia_o = mesh_mass_oracle(rock.verts, rock.faces, cfg.density)
        np.testing.assert_allclose(mass, mass_o, rtol=1e-10)
        np.testing.assert_allclose(com, com_o, atol=1e-10)
        np.testing.assert_allclose(inertia, inertia_o, rtol=1e-8, atol=1e-8)


def test_rocks_are_convex_and_watertight():
    cfg = RockGenConfig()
    rng = np.random.default_rng(41)
    for i in range(20):
        rock = generate_rock(rng, cfg, name=f"r{i}", seed=i)
        v, f = rock.verts, rock.faces
        # Euler characteristic of a closed triangulated sphere
        edges = set()
        for tri in f:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                edges.add((min(a, b), max(a, b)))
        assert len(v) - len(edges) + len(f) == 2
        # every vertex on or behind every face plane
        a = v[f[:, 0]]
        n = np.cross(v[f[:, 1]] - a, v[f[:, 2]] - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        d = (v[None, :, :] - a[:, None, :]) * n[:, None, :]
        assert d.sum(axis=-1).max() < 1e-9
        # outward winding: face normals point away from the origin (COM)
        assert np.all(np.einsum("ij,ij->i", n, a) > 0.0)


def test_extents_match_request_exactly():
    cfg = RockGenConfig()
    rng = np.random.default_rng(4)
    for i in range(20):
        want = np.array([
            rng.uniform(*cfg.extent_x),
            rng.uniform(*cfg.extent_y),
            rng.uniform(*cfg.extent_z),
        ])
        rock = generate_rock(rng, cfg, extents=want, name=f"r{i}", seed=100 + i)
        got = rock.verts.max(axis=0) - rock.verts.min(axis=0)
        np.testing.assert_allclose(got, want, rtol=1e-12)
        np.testing.assert_allclose(rock.extents, want, rtol=1e-12)


def test_center_of_mass_at_origin():
    cfg = RockGenConfig()
    rng = np.random.default_rng(8)
    for i in range(10):
        rock = generate_rock(rng, cfg, name=f"r{i}", seed=i)
        _, _, com, _ = mesh_mass_properties(rock.verts, rock.faces, cfg.density)
        np.testing.assert_allclose(com, np.zeros(3), atol=1e-12)


def test_dataset_split_counts_and_classes():
    cfg = RockGenConfig(n_train=50, n_eval_large=25)
    rocks, splits = sample_dataset(cfg, seed=0)
    assert len(rocks) == 75
    assert splits.count("train") == 50
    assert splits.count("heldout") == 25
    for rock, split in zip(rocks, splits):
        if split == "heldout":
            assert rock.extents[0] >= cfg.large_min_x
            assert rock.size_class == "large"
        if rock.extents[0] <= cfg.small_max_x:
            assert rock.size_class == "small"
    # the train split offers both ends of the size range
    train_classes = {r.size_class for r, s in zip(rocks, splits) if s == "train"}
    assert "small" in train_classes
    assert "large" in train_classes


def test_sampling_is_deterministic_per_seed():
    cfg = RockGenConfig(n_train=6, n_eval_large=3)
    a, _ = sample_dataset(cfg, seed=9)
    b, _ = sample_dataset(cfg, seed=9)
    c, _ = sample_dataset(cfg, seed=10)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.verts, rb.verts)
        np.testing.assert_array_equal(ra.faces, rb.faces)
    assert any((ra.verts.shape != rc.verts.shape or not np.array_equal(ra.verts, rc.verts))
               for ra, rc in zip(a, c))


def test_save_load_round_trip_is_bitwise(tmp_path):
    cfg = RockGenConfig(n_train=8, n_eval_large=4)
    rocks, splits = sample_dataset(cfg, seed=21)
    save_dataset(rocks, splits, cfg, 21, tmp_path)
    rset = load_dataset(tmp_path)
    assert len(rset.names) == 12
    for i, rock in enumerate(rocks):
        nv = rset.vert_counts[i]
        np.testing.assert_array_equal(rset.verts[i, :nv], rock.verts)
        assert rset.splits[i] == splits[i]
        np.testing.assert_array_equal(rset.mass[i], rock.mass)
        np.testing.assert_allclose(rset.inertia[i], rock.inertia, atol=0.0)
    assert rset.dataset_hash != ""


def test_manifest_detects_tampering(tmp_path):
    cfg = RockGenConfig(n_train=3, n_eval_large=2)
    rocks, splits = sample_dataset(cfg, seed=2)
    save_dataset(rocks, splits, cfg, 2, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    victim = tmp_path / manifest["entries"][0]["obj"]
    text = victim.read_text()
    victim.write_text(text.replace("v ", "v  ", 1))
    with pytest.raises(ValueError):
        load_dataset(tmp_path)


def test_padded_batch_masks_are_consistent():
    cfg = RockGenConfig(n_train=5, n_eval_large=2)
    rocks, splits = sample_dataset(cfg, seed=5)
    rset = rockset_from_meshes(rocks, splits)
    for i, rock in enumerate(rocks):
        nv = rset.vert_counts[i]
        assert nv == len(rock.verts)
        assert np.all(rset.verts[i, nv:] == 0.0)
        nf = rset.face_mask[i].sum()
        assert nf == len(rock.faces)
    small = rset.indices(size_class="small")
    large = rset.indices(size_class="large")
    held = rset.indices(split="heldout")
    assert set(held).issubset(set(large) | set(small)) or len(held) > 0
    for i in held:
        assert rset.splits[i] == "heldout"


def test_bounding_radius_covers_all_vertices():
    cfg = RockGenConfig(n_train=6, n_eval_large=2)
    rocks, splits = sample_dataset(cfg, seed=6)
    rset = rockset_from_meshes(rocks, splits)
    for i, rock in enumerate(rocks):
        r = np.linalg.norm(rock.verts, axis=1).max()
        assert rset.bound_radius[i] >= r - 1e-12
