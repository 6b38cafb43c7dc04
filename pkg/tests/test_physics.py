"""Rigid-rock dynamics: gravity, contacts, friction, resting stability."""

import numpy as np
import pytest

from boulderpick.config import PhysicsConfig, RockGenConfig
from boulderpick.physics import RockStateBatch, PlateKinematics, step_rock, settle_rocks
from boulderpick.rockgen import mesh_from_points, rockset_from_meshes, sample_dataset

DT = 1.0 / 120.0


@pytest.fixture(scope="module")
def cube_set():
    s = 0.5
    pts = np.array([[x, y, z] for x in (-s, s) for y in (-s, s) for z in (-s, s)], float)
    return rockset_from_meshes([mesh_from_points(pts, density=2500.0)])


@pytest.fixture(scope="module")
def rock_set():
    cfg = RockGenConfig(n_train=10, n_eval_large=0)
    rocks, splits = sample_dataset(cfg, seed=3)
    return rockset_from_meshes(rocks, splits)


def far_plates(n):
    centers = np.zeros((n, 4, 3))
    centers[:, :, 2] = 1.0e6
    return PlateKinematics(centers=centers, rots=np.tile(np.eye(3), (n, 4, 1, 1)),
                           halves=np.zeros((4, 2)), thickness=0.01)


def _single(rset, row=0, z=None, mu=0.5):
    st = RockStateBatch.allocate(1, rset.verts.shape[1])
    st.load_rocks([0], rset, [row], np.ones(1))
    st.pos[:, 2] = rset.bound_radius[row] + 0.05 if z is None else z
    st.mu[:] = mu
    return st


def test_free_fall_velocity_exact(cube_set):
    st = _single(cube_set, z=50.0)
    for _ in range(120):
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, PhysicsConfig())
    assert abs(st.linvel[0, 2] + 9.81) < 1e-9
    assert st.linvel[0, 0] == 0.0 and st.linvel[0, 1] == 0.0


def test_free_fall_position_quadratic(cube_set):
    st = _single(cube_set, z=50.0)
    for _ in range(120):
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, PhysicsConfig())
    # semi-implicit Euler: z = z0 - g*dt^2*(1+2+...+n) = z0 - g*dt^2*n(n+1)/2
    want = 50.0 - 9.81 * DT * DT * 120 * 121 / 2.0
    assert abs(st.pos[0, 2] - want) < 1e-9


def test_sliding_friction_deceleration(cube_set):
    cfg = PhysicsConfig()
    st = _single(cube_set, z=0.5, mu=0.4)
    for _ in range(240):
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
    st.linvel[0] = [2.0, 0.0, 0.0]
    t = 0.0
    while st.linvel[0, 0] > 0.05 and t < 3.0:
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
        t += DT
    decel = (2.0 - st.linvel[0, 0]) / t
    assert abs(decel - 0.4 * 9.81) / (0.4 * 9.81) < 0.05


def test_friction_stops_without_reversing(cube_set):
    cfg = PhysicsConfig()
    st = _single(cube_set, z=0.5, mu=0.5)
    for _ in range(240):
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
    st.linvel[0] = [1.0, 0.0, 0.0]
    min_vx = 1.0
    for _ in range(480):
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
        min_vx = min(min_vx, st.linvel[0, 0])
    # transient rocking may swing the COM back a little, but the cube must
    # come to a dead stop rather than ping-pong
    assert min_vx > -0.05
    assert abs(st.linvel[0, 0]) < 1e-6
    assert np.all(np.abs(st.angvel[0]) < 1e-6)


def test_higher_friction_stops_sooner(cube_set):
    cfg = PhysicsConfig()
    stops = []
    for mu in (0.35, 0.6):
        st = _single(cube_set, z=0.5, mu=mu)
        for _ in range(240):
            step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
        st.linvel[0] = [1.5, 0.0, 0.0]
        x0 = st.pos[0, 0]
        for _ in range(720):
            step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
        stops.append(st.pos[0, 0] - x0)
    assert stops[1] < stops[0]


def test_drop_has_negligible_bounce(cube_set):
    cfg = PhysicsConfig()
    st = _single(cube_set, z=1.0)
    bounced = False
    apex = 0.0
    for _ in range(480):
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
        if not bounced and st.linvel[0, 2] > 0.0:
            bounced = True
        if bounced:
            apex = max(apex, st.pos[0, 2])
    assert apex - 0.5 < 0.005  # under 1% of the 0.5 m drop


def test_random_rocks_settle_and_rest(rock_set):
    cfg = PhysicsConfig()
    n = 10
    st = RockStateBatch.allocate(n, rock_set.verts.shape[1])
    st.load_rocks(list(range(n)), rock_set, list(range(n)), np.ones(n))
    st.pos[:, 0] = np.arange(n, dtype=float) * 3.0
    st.pos[:, 2] = rock_set.bound_radius[:n] + 0.05
    rng = np.random.default_rng(7)
    st.angvel[:] = rng.normal(0.0, 0.5, (n, 3))
    for _ in range(360):
        step_rock(st, far_plates(n), np.zeros((n, 3)), DT, cfg)
    speed = np.linalg.norm(st.linvel, axis=1) + np.linalg.norm(st.angvel, axis=1)
    assert np.all(speed < 0.02)
    pos0 = st.pos.copy()
    for _ in range(2000):
        step_rock(st, far_plates(n), np.zeros((n, 3)), DT, cfg)
    drift = np.linalg.norm(st.pos - pos0, axis=1)
    assert drift.max() < 1e-4


def test_settle_helper_produces_resting_states(rock_set):
    cfg = PhysicsConfig()
    st = RockStateBatch.allocate(4, rock_set.verts.shape[1])
    st.load_rocks([0, 1, 2, 3], rock_set, [0, 1, 2, 3], np.ones(4))
    st.pos[:, 0] = np.arange(4, dtype=float) * 4.0
    st.pos[:, 2] = rock_set.bound_radius[:4] + 0.05
    settle_rocks(st, DT, cfg, 360)
    speed = np.linalg.norm(st.linvel, axis=1) + np.linalg.norm(st.angvel, axis=1)
    assert np.all(speed < 0.02)
    assert np.all(st.pos[:, 2] > 0.0)


def test_ground_never_pulls(rock_set):
    # a rock thrown upward from rest leaves the ground freely
    cfg = PhysicsConfig()
    st = _single(rock_set, row=2)
    settle_rocks(st, DT, cfg, 360)
    st.linvel[0] = [0.0, 0.0, 2.0]
    step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
    assert st.linvel[0, 2] > 2.0 - 9.81 * DT - 1e-9


def test_stepping_is_bitwise_deterministic(rock_set):
    cfg = PhysicsConfig()

    def run():
        st = RockStateBatch.allocate(4, rock_set.verts.shape[1])
        st.load_rocks([0, 1, 2, 3], rock_set, [0, 1, 2, 3], np.ones(4))
        rng = np.random.default_rng(11)
        st.pos[:, :2] = rng.normal(0.0, 1.0, (4, 2))
        st.pos[:, 2] = 1.0 + rng.uniform(0.0, 0.5, 4)
        st.angvel[:] = rng.normal(0.0, 1.0, (4, 3))
        st.linvel[:] = rng.normal(0.0, 1.0, (4, 3))
        for _ in range(600):
            step_rock(st, far_plates(4), np.zeros((4, 3)), DT, cfg)
        return st.pos.copy(), st.quat.copy(), st.linvel.copy(), st.angvel.copy()

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_moving_plate_pushes_without_tunneling(cube_set):
    cfg = PhysicsConfig()
    st = _single(cube_set, z=0.5)
    for _ in range(240):
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
    centers = np.zeros((1, 4, 3))
    centers[0, :] = [0.0, 0.0, 1.0e6]
    rots = np.tile(np.eye(3), (1, 4, 1, 1))
    wall = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    halves = np.array([[1.0, 1.0], [0, 0], [0, 0], [0, 0]], float)
    pk = PlateKinematics(centers=centers.copy(), rots=rots.copy(),
                         halves=halves, thickness=0.08)
    pk.rots[0, 0] = wall
    x = -0.62
    max_pen = 0.0
    for _ in range(240):
        x += 0.8 * DT
        newc = pk.centers.copy()
        newc[0, 0] = [x, 0.0, 0.5]
        pk.advance(newc, pk.rots.copy())
        rep = step_rock(st, pk, np.zeros((1, 3)), DT, cfg)
        max_pen = max(max_pen, rep.max_penetration[0])
    plate_face = x + 0.04
    rock_near_face = st.pos[0, 0] - 0.5
    assert rock_near_face > plate_face - 0.06   # stayed ahead of the face
    assert abs(st.linvel[0, 0] - 0.8) < 0.05    # carried at plate speed
    assert max_pen < 0.04                       # never crossed the slab mid-plane


def test_plate_contact_reports_reaction_wrench(cube_set):
    cfg = PhysicsConfig()
    st = _single(cube_set, z=0.5)
    for _ in range(240):
        step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
    centers = np.zeros((1, 4, 3))
    centers[0, :] = [0.0, 0.0, 1.0e6]
    rots = np.tile(np.eye(3), (1, 4, 1, 1))
    wall = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    halves = np.array([[1.0, 1.0], [0, 0], [0, 0], [0, 0]], float)
    pk = PlateKinematics(centers=centers.copy(), rots=rots.copy(),
                         halves=halves, thickness=0.08)
    pk.rots[0, 0] = wall
    x = -0.62
    pushed = []
    pivot = np.array([[0.0, 0.0, 2.0]])
    for _ in range(240):
        x += 0.8 * DT
        newc = pk.centers.copy()
        newc[0, 0] = [x, 0.0, 0.5]
        pk.advance(newc, pk.rots.copy())
        rep = step_rock(st, pk, pivot, DT, cfg)
        if rep.n_contacts[0] > 0 and np.linalg.norm(rep.bucket_force[0]) > 0:
            pushed.append((rep.bucket_force[0].copy(), rep.bucket_torque[0].copy()))
    assert pushed
    # reaction on the plate points back along -x (rock resists the push)
    forces = np.array([f for f, _ in pushed])
    assert forces[:, 0].min() < -1000.0
    # torque about the given pivot is consistent with force applied below it:
    # r = contact - pivot has r_z < 0, so tau_y = r_z * F_x flips the sign
    torques = np.array([t for _, t in pushed])
    worst = np.argmin(forces[:, 0])
    assert torques[worst, 1] * forces[worst, 0] < 0.0


def test_ground_contact_is_not_attributed_to_bucket(rock_set):
    cfg = PhysicsConfig()
    st = _single(rock_set, row=1)
    settle_rocks(st, DT, cfg, 360)
    rep = step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
    assert rep.n_contacts[0] > 0
    assert np.all(rep.bucket_force[0] == 0.0)
    assert np.all(rep.bucket_torque[0] == 0.0)


def test_numeric_fault_is_flagged_and_contained(cube_set):
    cfg = PhysicsConfig()
    st = _single(cube_set, z=0.5)
    st.linvel[0, 0] = np.nan
    step_rock(st, far_plates(1), np.zeros((1, 3)), DT, cfg)
    assert st.fault[0]
    assert np.isfinite(st.pos).all()
    assert np.isfinite(st.linvel).all()


def test_mass_scaling_changes_inertia_consistently(rock_set):
    st = RockStateBatch.allocate(2, rock_set.verts.shape[1])
    st.load_rocks([0, 1], rock_set, [3, 3], np.array([0.9, 1.1]))
    np.testing.assert_allclose(st.mass[1] / st.mass[0], 1.1 / 0.9, rtol=1e-12)
    np.testing.assert_allclose(
        st.inertia_body[1], st.inertia_body[0] * (1.1 / 0.9), rtol=1e-9, atol=1e-12
    )
