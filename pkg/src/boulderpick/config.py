"""Configuration tree for the simulator, trainer, and tools.

Everything tunable lives here as nested dataclasses with working defaults.
Configs round-trip through YAML; unknown keys in a loaded file are an error
so typos fail loudly. Tools write a fully resolved snapshot next to their
outputs so a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml


@dataclass
class TimingConfig:
    dt_control: float = 1.0 / 6.0      # policy/control period (s)
    substeps: int = 20                 # physics substeps per control step

    @property
    def dt_phys(self) -> float:
        return self.dt_control / self.substeps


@dataclass
class BucketConfig:
    """Bucket box geometry in the bucket frame (origin at the pivot).

    The bucket hangs below the pivot: the bottom plate spans
    x in [-edge_reach, heel_reach] at z = -depth, the cutting edge is the
    x = -edge_reach border, the back plate closes the +x side, and the two
    side plates close +-y. Interior of the box is +z of the bottom plate.
    """

    width: float = 1.2          # inner width (m), y in [-width/2, width/2]
    edge_reach: float = 0.25    # pivot to cutting edge, along -x (m)
    heel_reach: float = 0.75    # pivot to back plate, along +x (m)
    depth: float = 0.8          # pivot to bottom plate, along -z (m)
    wall_height: float = 0.7    # back/side plate height from the bottom (m)
    plate_thickness: float = 0.08  # collision slab thickness (m)
    edge_area: float = 0.015    # cutting edge cross-section for penetration (m^2)


@dataclass
class ArmConfig:
    """Five-joint arm: turn, boom, stick, telescope, bucket pitch.

    Boom/stick/pitch rotate about the cabin y axis with the screw
    convention of R_y: positive angles pitch the distal link downward.
    """

    boom_pivot: tuple = (0.6, 0.0, 1.2)   # in the rotating cabin frame (m)
    boom_length: float = 3.0
    stick_length: float = 1.8
    # joint order everywhere: [turn, boom, stick, tele, pitch]
    q_lo: tuple = (-2.9, -1.1, 0.25, 0.0, -1.5)
    q_hi: tuple = (2.9, 0.5, 2.6, 1.2, 2.6)
    qd_max: tuple = (0.5, 0.35, 0.5, 0.4, 0.9)
    deadband: tuple = (0.05, 0.02, 0.02, 0.02, 0.02)  # command deadband (rad/s, m/s)
    delay_max: float = 1.2        # largest sampled actuation delay (s)
    history_len: int = 8          # turn command/velocity history length
    # lumped link masses for gravity torque (kg): boom, stick, tele, bucket
    link_masses: tuple = (1500.0, 700.0, 250.0, 500.0)
    torque_rating: tuple = (60000.0, 250000.0, 120000.0, 80000.0, 40000.0)
    bucket: BucketConfig = field(default_factory=BucketConfig)


@dataclass
class PhysicsConfig:
    gravity: float = 9.81
    contact_stiffness: float = 1.0e6   # penalty spring ceiling (N/m)
    # per-contact stiffness is capped at m_eff*(stiff_freq_cap/dt)^2/n_contacts
    # so light rocks stay inside the explicit-integration stability region
    stiff_freq_cap: float = 0.5
    # moment arm (m) of the contact-patch rolling resistance torque
    rolling_resistance: float = 0.02
    ground_z: float = 0.0
    max_contacts_guard: int = 64


@dataclass
class SoilParams:
    """Earthmoving material parameters for one soil condition."""

    cohesion: float = 0.0          # c (Pa)
    friction_angle: float = 0.5498  # phi (rad)
    unit_weight: float = 19500.0   # gamma (N/m^3)
    ext_friction_angle: float = 0.4014  # delta, soil-tool friction (rad)
    cp: float = 1.0                # penetration resistance coefficient
    adhesion_ratio: float = 0.0    # c_a / c
    cut_resist: float = 1.0        # multiplier on the cutting term

    @property
    def adhesion(self) -> float:
        return self.adhesion_ratio * self.cohesion


def soft_soil() -> SoilParams:
    return SoilParams(
        cohesion=0.0,
        friction_angle=np.deg2rad(31.5),
        unit_weight=19500.0,
        ext_friction_angle=np.deg2rad(23.0),
        cp=1.0,
        adhesion_ratio=0.0,
    )


def hard_soil() -> SoilParams:
    return SoilParams(
        cohesion=105000.0,
        friction_angle=np.deg2rad(32.0),
        unit_weight=21000.0,
        ext_friction_angle=np.deg2rad(23.0),
        cp=300.0,
        adhesion_ratio=0.5,
    )


SOIL_PRESETS = {"soft": soft_soil, "hard": hard_soil}


@dataclass
class SoilConfig:
    n_trial_angles: int = 201      # failure-plane candidates in (0, pi/2)
    rake_min: float = 0.0873       # clamp on blade rake angle (rad)
    rake_max: float = 1.4835
    speed_gate: float = 1.0e-4     # edge speed below which soil force is zero
    surface_z: float = 0.0


@dataclass
class RockGenConfig:
    density: float = 2500.0        # kg/m^3
    n_base_points: tuple = (40, 80)
    noise_amplitude: float = 0.25  # low-frequency radial noise, fraction of radius
    extent_x: tuple = (0.3, 1.0)
    extent_y: tuple = (0.1, 0.5)
    extent_z: tuple = (0.2, 0.7)
    small_max_x: float = 0.5       # size classes split on the x extent
    large_min_x: float = 0.8
    n_train: int = 50
    n_eval_large: int = 25
    mass_scale_range: tuple = (0.9, 1.1)
    friction_range: tuple = (0.35, 0.6)


@dataclass
class SensorConfig:
    mount_pos: tuple = (1.4, 0.0, 2.4)   # rotating cabin frame (m)
    azimuth_range: tuple = (-1.0472, 1.0472)   # +-60 deg
    elevation_range: tuple = (-0.9599, -0.0873)  # -55..-5 deg
    n_azimuth: int = 128
    n_elevation: int = 32
    max_range: float = 15.0
    n_cloud_points: int = 20


@dataclass
class RewardConfig:
    w_align: float = 0.005         # R1, lateral alignment with the boulder
    w_near: float = 0.01           # R2, small lateral gap to the boulder
    w_beneath: float = 0.01        # R3, bottom plate below the boulder
    w_in_shovel: float = 0.075     # R4, boulder captured
    w_curl: float = 0.05           # R5, captured and curled past target
    w_lift: float = 0.05           # R6, raised toward the carry height
    w_success: float = 20.0        # R7, terminal
    w_action_rate: float = -0.005  # P1, command change between steps
    w_overspeed: float = -0.1      # P2, bucket speed above the soft limit
    w_turn: float = -0.005         # P3, turning at all
    w_turn_dig: float = -0.025     # P4, turning while the edge is in soil
    w_misalign: float = -0.0125    # P5, cutting deep while laterally offset
    w_fail: float = -0.5           # P6, terminal
    theta_target: float = 0.5      # curl angle that secures a rock (rad)
    h_desired: float = 0.5         # carry height above the soil (m)
    v_max: float = 0.6             # soft bucket speed limit (m/s)
    gap_close_sq: float = 1.5      # R2 threshold on squared lateral gap (m^2)
    turn_eps: float = 0.05         # P3/P4 turn-rate deadband (rad/s)
    mis_d_soft: float = 0.05       # P5 depth ramp (m)
    mis_d_hard: float = 0.30
    mis_y_min: float = 0.2         # P5 lateral offset ramp (m)
    mis_y_max: float = 1.0


@dataclass
class TerminationConfig:
    time_limit: float = 29.0       # T1 (s)
    v_max_base: float = 0.1        # T2, base speed in the world frame (m/s)
    # T3, per-joint speed limit; matches the command rate limits so it can
    # only fire on states that did not come out of the command pipeline
    qd_max: tuple = (0.5, 0.35, 0.5, 0.4, 0.9)
    v_max_term: float = 1.2        # T4, bucket speed, rotating frame (m/s)
    h_min: float = -0.05           # T5, boulder sunk below this z (m)
    alpha_threshold: float = 0.0   # T6, angle of attack (rad)
    aoa_speed_gate: float = 0.05   # T6 needs at least this edge speed (m/s)
    curl_success: float = 0.5      # T7 curl angle (rad)
    lift_success: float = 0.5      # T7 boulder height above the soil (m)


@dataclass
class LevelConfig:
    """Placement geometry and feature gates for one curriculum level.

    Placement bands keep every rock inside the annulus that is both
    visible to the scanner at reset (radial >= ~2.9 m; nearer rocks sit
    under the lowest scan ray) and diggable (edge must plunge past the
    rock's far side, which tops out around 6.3 m of radial reach).
    """

    rock_ahead: tuple = (0.3, 2.8)   # radial offset of rock beyond the edge (m)
    rock_lateral: float = 0.3        # +- lateral band (m)
    rock_drop: float = 0.4           # settle drop band above ground (m)
    absolute_placement: bool = False  # sample rock/bucket independently
    region_radial: tuple = (2.9, 5.7)  # used when absolute_placement
    region_lateral: float = 1.5
    attack_angle_term: bool = False  # T6 active
    randomize_soil: bool = False     # interpolate soft..hard per episode
    misalign_penalty: bool = False   # P5 active


def default_levels() -> list:
    return [
        LevelConfig(),
        LevelConfig(attack_angle_term=True),
        LevelConfig(attack_angle_term=True, randomize_soil=True),
        LevelConfig(
            attack_angle_term=True,
            randomize_soil=True,
            absolute_placement=True,
        ),
        LevelConfig(
            attack_angle_term=True,
            randomize_soil=True,
            absolute_placement=True,
            misalign_penalty=True,
            region_radial=(2.9, 5.9),
        ),
    ]


@dataclass
class CurriculumConfig:
    window: int = 1000
    advance_threshold: float = 0.8
    levels: list = field(default_factory=default_levels)


@dataclass
class ResetConfig:
    cache_size: int = 1024
    settle_time: float = 3.0          # seconds of free settling per candidate
    settle_vel_tol: float = 0.02      # must come to rest below this (m/s)
    min_edge_clearance: float = 0.25  # lowest bucket point above ground (m)
    min_rock_gap: float = 0.15        # rock surface to plate slab margin (m)
    edge_radial: tuple = (2.6, 3.0)   # sampled edge staging band (m)
    edge_height: tuple = (0.4, 1.2)
    stage_chi: tuple = (-0.4, 0.3)    # bucket pitch staging band (rad)
    turn_range: float = 2.0           # |q_turn| at reset (rad)
    stage_bearing: float = 0.5        # |rock bearing from cabin| cap (rad)
    delay_range: tuple = (0.0, 1.2)   # per-episode actuation delay (s)
    mu_range: tuple = (0.35, 0.6)     # per-episode rock-ground friction
    mass_scale_range: tuple = (0.9, 1.1)  # per-episode rock mass factor
    min_accept_rate: float = 0.001    # abort cache build below this


@dataclass
class EnvConfig:
    timing: TimingConfig = field(default_factory=TimingConfig)
    arm: ArmConfig = field(default_factory=ArmConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    soil: SoilConfig = field(default_factory=SoilConfig)
    rocks: RockGenConfig = field(default_factory=RockGenConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    termination: TerminationConfig = field(default_factory=TerminationConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    reset: ResetConfig = field(default_factory=ResetConfig)
    # observation normalization boxes (rotating cabin frame)
    workspace_x: tuple = (-1.0, 8.0)
    workspace_y: tuple = (-4.0, 4.0)
    workspace_z: tuple = (-1.0, 3.5)
    bucket_speed_norm: float = 2.0
    bucket_omega_norm: float = 2.0
    torque_norm_scale: float = 2.0   # torque range = +- scale * rating
    in_soil_depth: float = 0.01      # edge this far under the surface counts
                                     # as digging (P4, P5, T6 gate)


@dataclass
class PpoConfig:
    lr: float = 1.0e-4
    clip: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.005
    epochs: int = 5
    minibatches: int = 4
    gamma: float = 0.99
    lam: float = 0.95
    max_grad_norm: float = 1.0
    hidden: tuple = (256, 256)
    init_std: float = 0.4
    rollout_steps: int = 24


@dataclass
class TrainConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    num_envs: int = 256
    iterations: int = 500
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 100
    stop_success_rate: float = 0.0   # >0: stop once rolling success exceeds it
    pin_level: int = -1              # >=0: disable curriculum advancement
    rocks_dir: str = "rocks"
    cache_dir: str = "cache"
    out_dir: str = "runs/default"


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_plain(cls, data):
    if not dataclasses.is_dataclass(cls):
        return data
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise KeyError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.type, str) and f.type in _DATACLASS_REGISTRY
        ):
            sub = _DATACLASS_REGISTRY[f.type] if isinstance(f.type, str) else f.type
            kwargs[name] = _from_plain(sub, value)
        elif name == "levels":
            kwargs[name] = [_from_plain(LevelConfig, v) for v in value]
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_DATACLASS_REGISTRY = {
    c.__name__: c
    for c in (
        TimingConfig, BucketConfig, ArmConfig, PhysicsConfig, SoilParams,
        SoilConfig, RockGenConfig, SensorConfig, RewardConfig,
        TerminationConfig, LevelConfig, CurriculumConfig, ResetConfig,
        EnvConfig, PpoConfig, TrainConfig,
    )
}


def config_to_dict(cfg) -> dict:
    return _to_plain(cfg)


def config_from_dict(cls, data: dict):
    return _from_plain(cls, data)


def load_config(path, cls=TrainConfig):
    """Load a YAML config file. Missing keys keep their defaults."""
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise TypeError(f"config root must be a mapping, got {type(raw).__name__}")
    base = _to_plain(cls())
    merged = _deep_merge(base, raw)
    return _from_plain(cls, merged)


def _deep_merge(base, override):
    out = dict(base)
    for k, v in override.items():
        if k in base and isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _deep_merge(base[k], v)
        else:
            out[k] = v
    return out


def save_config(cfg, path):
    """Write a fully resolved snapshot of cfg as YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(_to_plain(cfg), sort_keys=False))
