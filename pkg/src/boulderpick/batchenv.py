"""Vectorized excavation environment.

One rigid rock per env, a kinematic arm driven by delayed rate commands,
analytic soil resistance felt through the joint torques, and a sparse
scanner cloud as the only exteroception. Control runs at 6 Hz; each
control step integrates 20 physics substeps. Episodes auto-reset: the
step after a terminal one returns the next episode's first observation.

Everything is deterministic given (seed, num_envs): stepping is single
threaded, reductions are fixed-order, and per-episode randomness comes
from one generator whose call order never varies.
"""

from __future__ import annotations

import numpy as np

from .arm import ActionPipeline, ArmModel
from .config import EnvConfig, hard_soil, soft_soil
from .curriculum import Curriculum
from .mathutil import rotz_apply_inv
from .obs import ObsLayout
from .physics import PlateKinematics, RockStateBatch, step_rock
from .resetcache import ResetCache
from .rewards import TERM_NAMES, reward_terms
from .rockgen import RockSet
from .sensor import Lidar, cloud_batch, face_planes
from .soil import SoilBatch, excavation_slice, soil_force_world
from .state import StepState
from .termination import CAUSE_NAMES, termination_causes

SOIL_FIELDS = (
    "cohesion", "friction_angle", "unit_weight",
    "ext_friction_angle", "cp", "adhesion_ratio", "cut_resist",
)


class BatchEnv:
    def __init__(self, cfg: EnvConfig, n_envs: int, rset: RockSet,
                 caches: dict, seed: int = 0, pin_level: int | None = None,
                 soil=None):
        self.cfg = cfg
        self.n = n_envs
        self.rset = rset
        self.caches = {int(k): v for k, v in caches.items()}
        self.pin_level = pin_level
        # fixed soil for every sampled reset (evaluation); None = per level
        self.soil_pin = soil
        levels = cfg.curriculum.levels
        needed = [pin_level] if pin_level is not None else list(range(len(levels)))
        for lvl in needed:
            cache = self.caches.get(lvl)
            if cache is None or len(cache) == 0:
                raise ValueError(
                    f"no start-state cache for level {lvl}; generate one with "
                    "the cache tool before creating envs"
                )
            if cache.meta.get("dataset_hash") != rset.dataset_hash:
                raise ValueError(f"cache for level {lvl} was built for a different dataset")

        self.arm = ArmModel(cfg.arm)
        self.lidar = Lidar(cfg.sensor)
        self.layout = ObsLayout(cfg)
        self.pipeline = ActionPipeline(n_envs, self.arm, cfg.timing.dt_control)
        self.curriculum = Curriculum(
            n_levels=1 if pin_level is not None else len(levels),
            window=cfg.curriculum.window,
            threshold=cfg.curriculum.advance_threshold,
        )
        self.rng = np.random.default_rng([seed, 2])
        self.face_normals, self.face_offsets = face_planes(rset)

        n = n_envs
        self.rock = RockStateBatch.allocate(n, rset.verts.shape[1])
        self.soil = SoilBatch.from_params(soft_soil(), n)
        self.plates = PlateKinematics(
            centers=np.zeros((n, 4, 3)),
            rots=np.tile(np.eye(3), (n, 4, 1, 1)),
            halves=self.arm.plate_halves,
            thickness=cfg.arm.bucket.plate_thickness,
        )
        self.q = np.zeros((n, 5))
        self.qd = np.zeros((n, 5))
        self.tau = np.zeros((n, 5))
        self.turn_vel_hist = np.zeros((n, cfg.arm.history_len))
        self.cloud = np.zeros((n, cfg.sensor.n_cloud_points, 3))
        self.cloud_valid = np.zeros(n, dtype=bool)
        self.last_action = np.zeros((n, 5))
        self.prev_edge_rb = np.zeros((n, 3))
        self.prev_edge_w = np.zeros((n, 3))
        self.edge_vel_rb = np.zeros((n, 3))
        self.ep_len = np.zeros(n, dtype=np.int64)
        self.ep_return = np.zeros(n)
        self.rock_z0 = np.zeros(n)
        self.t6_on = np.zeros(n, dtype=bool)
        self.p5_on = np.zeros(n, dtype=bool)
        self.level_at_reset = np.zeros(n, dtype=np.int64)
        self.cache_index = np.zeros(n, dtype=np.int64)
        self.ep_delay = np.zeros(n)
        self.ep_mu = np.zeros(n)
        self.ep_mass_scale = np.ones(n)
        self.pending_fault = np.zeros(n, dtype=bool)
        self.frames = self.arm.fk(self.q)
        self.total_steps = 0

    # ------------------------------------------------------------------ reset

    @property
    def active_level(self) -> int:
        return self.pin_level if self.pin_level is not None else self.curriculum.level

    def reset_all(self):
        self._reset_sampled(np.arange(self.n))
        return self._observe()

    def _reset_sampled(self, idx) -> None:
        """Draw fresh start states for the given envs at the active level."""
        idx = np.asarray(idx, dtype=np.int64)
        k = len(idx)
        if k == 0:
            return
        lvl = self.active_level
        level_cfg = self.cfg.curriculum.levels[lvl]
        cache: ResetCache = self.caches[lvl]
        rcfg = self.cfg.reset
        ci = self.rng.integers(0, len(cache), k)
        delay = self.rng.uniform(rcfg.delay_range[0], rcfg.delay_range[1], k)
        mu = self.rng.uniform(rcfg.mu_range[0], rcfg.mu_range[1], k)
        ms = self.rng.uniform(rcfg.mass_scale_range[0], rcfg.mass_scale_range[1], k)
        if self.soil_pin is not None:
            soil_sub = SoilBatch.from_params(self.soil_pin, k)
        elif level_cfg.randomize_soil:
            soil_sub = SoilBatch.sample_between(soft_soil(), hard_soil(), self.rng, k)
        else:
            soil_sub = SoilBatch.from_params(soft_soil(), k)
        self._apply_reset(idx, lvl, ci, delay, mu, ms, soil_sub)

    def reset_exact(self, env_i: int, meta: dict) -> None:
        """Reset one env to a recorded episode's exact starting conditions."""
        lvl = int(meta["level"])
        soil_sub = SoilBatch(**{f: np.array([meta["soil"][f]]) for f in SOIL_FIELDS})
        self._apply_reset(
            np.array([env_i]),
            lvl,
            np.array([meta["cache_index"]]),
            np.array([meta["delay"]]),
            np.array([meta["mu"]]),
            np.array([meta["mass_scale"]]),
            soil_sub,
        )

    def _apply_reset(self, idx, lvl, cache_idx, delay, mu, mass_scale, soil_sub) -> None:
        cache: ResetCache = self.caches[lvl]
        level_cfg = self.cfg.curriculum.levels[lvl]
        k = len(idx)
        q = cache.q[cache_idx]
        self.q[idx] = q
        self.qd[idx] = 0.0
        self.pipeline.reset_envs(idx, delay)
        self.rock.load_rocks(idx, self.rset, cache.rock_row[cache_idx], mass_scale)
        self.rock.pos[idx] = cache.rock_pos[cache_idx]
        self.rock.quat[idx] = cache.rock_quat[cache_idx]
        self.rock.linvel[idx] = 0.0
        self.rock.angvel[idx] = 0.0
        self.rock.mu[idx] = mu
        self.rock.fault[idx] = False
        self.soil.set_rows(idx, soil_sub, np.arange(k))
        self.t6_on[idx] = level_cfg.attack_angle_term
        self.p5_on[idx] = level_cfg.misalign_penalty
        self.level_at_reset[idx] = lvl
        self.cache_index[idx] = cache_idx
        self.ep_delay[idx] = delay
        self.ep_mu[idx] = mu
        self.ep_mass_scale[idx] = mass_scale
        self.ep_len[idx] = 0
        self.ep_return[idx] = 0.0
        self.rock_z0[idx] = self.rock.pos[idx, 2]
        self.last_action[idx] = 0.0
        self.turn_vel_hist[idx] = 0.0
        self.pending_fault[idx] = False

        fr = self.arm.fk(q)
        self._write_frames(idx, fr)
        self.plates.centers[idx] = fr.plate_centers_w
        self.plates.rots[idx] = fr.plate_rots_w
        self.plates.prev_centers[idx] = fr.plate_centers_w
        self.plates.prev_rots[idx] = fr.plate_rots_w
        self.prev_edge_rb[idx] = fr.edge_rb
        self.prev_edge_w[idx] = fr.edge_w
        self.edge_vel_rb[idx] = 0.0
        self.tau[idx] = self.arm.joint_torques(q)

        # fresh episode: no held cloud. The staged bucket may shadow the
        # rock, in which case the cloud stays zero until the arm moves.
        pts, counts = self.lidar.scan(
            q[:, 0], self.rock.pos[idx], self.rock.quat[idx], self.rock.rock_index[idx],
            self.face_normals, self.face_offsets, self.rset.bound_radius,
            fr.plate_centers_w, fr.plate_rots_w, self.arm.plate_halves,
        )
        sub = np.zeros((k, self.cfg.sensor.n_cloud_points, 3))
        _, valid = cloud_batch(pts, counts, self.lidar.origin,
                               self.cfg.sensor.n_cloud_points, sub)
        self.cloud[idx] = sub
        self.cloud_valid[idx] = valid

    def _write_frames(self, idx, fr) -> None:
        f = self.frames
        f.q[idx] = fr.q
        f.boom_tip_rb[idx] = fr.boom_tip_rb
        f.pivot_rb[idx] = fr.pivot_rb
        f.edge_rb[idx] = fr.edge_rb
        f.chi[idx] = fr.chi
        f.pivot_w[idx] = fr.pivot_w
        f.edge_w[idx] = fr.edge_w
        f.plate_centers_w[idx] = fr.plate_centers_w
        f.plate_rots_w[idx] = fr.plate_rots_w

    # ------------------------------------------------------------------- step

    def step(self, actions):
        """Advance every env one control step.

        Returns (obs, reward, done, info); done envs are already reset and
        their obs row is the new episode's first observation, while reward
        and info still describe the step that ended.
        """
        cfg = self.cfg
        n = self.n
        actions = np.asarray(actions, dtype=np.float64)
        bad_action = ~np.all(np.isfinite(actions), axis=-1)
        actions = np.where(bad_action[:, None], 0.0, np.clip(actions, -1.0, 1.0))

        rates = actions * self.arm.qd_max
        delayed = self.pipeline.push(self.arm.apply_deadband(rates), actions[:, 0])
        q_new, realized = self.arm.integrate_joints(self.q, delayed, cfg.timing.dt_control)

        sub = cfg.timing.substeps
        dt_p = cfg.timing.dt_phys
        f_sum = np.zeros((n, 3))
        tau_sum = np.zeros((n, 3))
        q_old = self.q
        for s in range(1, sub + 1):
            frac = s / sub
            fr = self.arm.fk(q_old + (q_new - q_old) * frac)
            self.plates.advance(fr.plate_centers_w, fr.plate_rots_w)
            report = step_rock(self.rock, self.plates, fr.pivot_w, dt_p, cfg.physics)
            f_sum += report.bucket_force
            tau_sum += report.bucket_torque
        self.q = q_new
        self.qd = realized
        self.frames = fr
        self.total_steps += 1

        edge_vel_w = (fr.edge_w - self.prev_edge_w) / cfg.timing.dt_control
        self.edge_vel_rb = (fr.edge_rb - self.prev_edge_rb) / cfg.timing.dt_control
        self.prev_edge_w = fr.edge_w.copy()
        self.prev_edge_rb = fr.edge_rb.copy()

        cut = excavation_slice(q_new[:, 0], fr.chi, fr.edge_w, edge_vel_w, cfg.soil)
        f_soil = soil_force_world(q_new[:, 0], cut, self.soil, cfg.soil,
                                  cfg.arm.bucket.width, cfg.arm.bucket.edge_area)
        arm_soil = fr.edge_w - fr.pivot_w
        tau_ext = tau_sum / sub + np.stack(
            [
                arm_soil[:, 1] * f_soil[:, 2] - arm_soil[:, 2] * f_soil[:, 1],
                arm_soil[:, 2] * f_soil[:, 0] - arm_soil[:, 0] * f_soil[:, 2],
                arm_soil[:, 0] * f_soil[:, 1] - arm_soil[:, 1] * f_soil[:, 0],
            ],
            axis=-1,
        )
        self.tau = self.arm.joint_torques(
            q_new, f_ext_w=f_sum / sub + f_soil, p_app_w=fr.pivot_w, tau_ext_w=tau_ext
        )

        pts, counts = self.lidar.scan(
            q_new[:, 0], self.rock.pos, self.rock.quat, self.rock.rock_index,
            self.face_normals, self.face_offsets, self.rset.bound_radius,
            fr.plate_centers_w, fr.plate_rots_w, self.arm.plate_halves,
        )
        _, self.cloud_valid = cloud_batch(
            pts, counts, self.lidar.origin, cfg.sensor.n_cloud_points, self.cloud
        )

        self.turn_vel_hist[:, :-1] = self.turn_vel_hist[:, 1:]
        self.turn_vel_hist[:, -1] = realized[:, 0]
        self.ep_len += 1
        prev_action = self.last_action
        self.last_action = actions.copy()

        state = self._step_state(bad_action, prev_action)
        cause = termination_causes(state, cfg.termination, self.t6_on)
        terms = reward_terms(state, cause, cfg.reward, self.p5_on)
        reward = np.sum(terms, axis=-1)
        self.ep_return += reward
        done = cause > 0

        info = {
            "cause": cause,
            "cause_name": [CAUSE_NAMES[c] for c in cause],
            "terms": terms,
            "term_names": TERM_NAMES,
            "success": cause == 7,
            "q": self.q.copy(),
            "qd": self.qd.copy(),
            "tau": self.tau.copy(),
            "chi": fr.chi.copy(),
            "turn": self.q[:, 0].copy(),
            "pivot_w": fr.pivot_w.copy(),
            "edge_w": fr.edge_w.copy(),
            "rock_pos": self.rock.pos.copy(),
            "t": self.ep_len * cfg.timing.dt_control,
            "ep_return": self.ep_return.copy(),
            "ep_len": self.ep_len.copy(),
            "level": self.active_level,
            "cloud_valid": self.cloud_valid.copy(),
            "in_soil": state.in_soil,
            "edge_depth": state.edge_depth,
        }

        done_idx = np.flatnonzero(done)
        if len(done_idx) > 0:
            self.curriculum.record(cause[done_idx] == 7)
            self._reset_sampled(done_idx)
        info["success_rate"] = self.curriculum.success_rate

        obs = self._observe()
        return obs, reward, done, info

    def _step_state(self, bad_action, prev_action) -> StepState:
        cfg = self.cfg
        fr = self.frames
        turn = self.q[:, 0]
        rock_rb = rotz_apply_inv(turn, self.rock.pos)
        edge_z = fr.edge_w[:, 2]
        depth = np.maximum(0.0, cfg.soil.surface_z - edge_z)
        fault = self.rock.fault | bad_action | self.pending_fault
        self.pending_fault = np.zeros(self.n, dtype=bool)
        return StepState(
            q=self.q,
            qd=self.qd,
            chi=fr.chi,
            bucket_pos_rb=fr.pivot_rb,
            edge_rb=fr.edge_rb,
            edge_vel_rb=self.edge_vel_rb,
            bottom_z=fr.plate_centers_w[:, 0, 2],
            rock_pos_w=self.rock.pos,
            rock_pos_rb=rock_rb,
            rock_z_gain=self.rock.pos[:, 2] - self.rock_z0,
            in_shovel=self.arm.in_shovel(fr, self.rock.pos),
            in_soil=edge_z < cfg.soil.surface_z - cfg.in_soil_depth,
            edge_depth=depth,
            base_vel=np.zeros(self.n),
            action=self.last_action,
            prev_action=prev_action,
            t=self.ep_len * cfg.timing.dt_control,
            fault=fault,
        )

    def _observe(self):
        lay = self.layout
        fr = self.frames
        n = self.n
        raw = np.empty((n, lay.size))
        sl = lay.slices
        raw[:, sl["joint_pos"]] = self.q
        raw[:, sl["joint_vel"]] = self.qd
        raw[:, sl["joint_torque"]] = self.tau
        raw[:, sl["turn_pos"]] = self.q[:, 0:1]
        raw[:, sl["turn_vel_hist"]] = self.turn_vel_hist
        raw[:, sl["bucket_pos"]] = fr.pivot_rb
        raw[:, sl["bucket_quat"]] = fr.bucket_quat_rb
        raw[:, sl["bucket_linvel"]] = self.edge_vel_rb
        chi_dot = self.qd[:, 1] + self.qd[:, 2] + self.qd[:, 4]
        raw[:, sl["bucket_angvel"]] = 0.0
        raw[:, sl["bucket_angvel"].start + 1] = chi_dot
        raw[:, sl["cloud"]] = self.cloud.reshape(n, -1)
        raw[:, sl["prev_action"]] = self.last_action
        raw[:, sl["turn_cmd_hist"]] = self.pipeline.turn_cmd_hist
        obs = lay.normalize(raw)
        rows = ~np.all(np.isfinite(obs), axis=-1)
        if np.any(rows):
            obs[rows] = 0.0
            self.pending_fault |= rows
        return obs

    def episode_meta(self, env_i: int) -> dict:
        """Reset-time record for one env, enough for reset_exact to replay."""
        lvl = int(self.level_at_reset[env_i])
        cache = self.caches[lvl]
        return {
            "level": lvl,
            "cache_index": int(self.cache_index[env_i]),
            "cache_seed": cache.meta.get("seed"),
            "dataset_hash": self.rset.dataset_hash,
            "rock_row": int(self.rock.rock_index[env_i]),
            "delay": float(self.ep_delay[env_i]),
            "mu": float(self.ep_mu[env_i]),
            "mass_scale": float(self.ep_mass_scale[env_i]),
            "soil": {f: float(getattr(self.soil, f)[env_i]) for f in SOIL_FIELDS},
        }

    def __repr__(self):
        return f"BatchEnv(n={self.n}, level={self.active_level})"
