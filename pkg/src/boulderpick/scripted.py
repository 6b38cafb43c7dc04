"""Hand-built digging controller.

A six-phase state machine that turns toward the rock, parks the cutting
edge beyond its far side, sinks to digging depth, drags the plate back
underneath, curls, and lifts clear. It reads privileged simulator state,
including the command queue still in flight, so it tracks targets as if
there were no actuation delay.

With probe_tau set, the descent phase watches boom-torque resistance and
stops sinking early when the ground pushes back hard: the same script
then digs shallow in stiff soil and full depth in loose soil.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batchenv import BatchEnv
from .mathutil import inv3, rotz_apply_inv

ALIGN, APPROACH, LOWER, DRAG, CURL, LIFT = range(6)


@dataclass
class ScriptedConfig:
    align_tol: float = 0.1       # lateral rock offset that counts as aligned (m)
    insert_margin: float = 0.25  # edge parks this far beyond the rock's far side (m)
    approach_clear: float = 0.35  # descent staging height above the rock top (m)
    dig_depth: float = 0.13      # nominal edge depth below the surface (m)
    pull_floor: float = 3.0      # closest radial the edge can dig at (m)
    pull_back: float = 0.55      # drag aims this far inside the rock center (m)
    pass_margin: float = 0.3     # edge this far inside the rock center ends the drag (m)
    curl_target: float = 0.62    # bucket pitch that ends the curl phase (rad)
    lift_pivot_z: float = 1.4    # boom stops rising past this pivot height (m)
    turn_gain: float = 2.5       # P gain on cabin heading error (1/s)
    task_gain: float = 1.8       # P gain on edge position error (1/s)
    chi_gain: float = 1.5        # P gain on bucket pitch error (1/s)
    reach_max: float = 5.9       # staging targets clamp to the arm's reach (m)
    probe_tau: float = 0.0       # boom resistance that stops the descent (N*m, 0 = off)


def pending_motion(pipe) -> np.ndarray:
    """Joint motion (rad or m) the delay queue will still deliver.

    The ring holds post-deadband rates newest-first from the head; the k
    most recent pushes have not reached the arm yet.
    """
    s = pipe.ring.shape[1]
    order = (pipe.head - np.arange(s)) % s
    cmds = pipe.ring[:, order, :]
    live = np.arange(s)[None, :] < pipe.delay_steps[:, None]
    return np.sum(cmds * live[:, :, None], axis=1) * pipe.dt


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


class ScriptedPolicy:
    def __init__(self, env: BatchEnv, cfg: ScriptedConfig | None = None):
        self.env = env
        self.cfg = cfg or ScriptedConfig()
        n = env.n
        self.phase = np.zeros(n, dtype=np.int64)
        self.insert_r = np.zeros(n)
        self.pull_r = np.full(n, self.cfg.pull_floor)
        self.dig_z = np.full(n, -self.cfg.dig_depth)
        self.over = np.zeros(n, dtype=bool)
        self.tripped = np.zeros(n, dtype=bool)

    def notify_done(self, done) -> None:
        """Clear controller state for rows whose episode just ended."""
        idx = np.flatnonzero(done)
        self.phase[idx] = ALIGN
        self.insert_r[idx] = 0.0
        self.pull_r[idx] = self.cfg.pull_floor
        self.dig_z[idx] = -self.cfg.dig_depth
        self.over[idx] = False
        self.tripped[idx] = False

    def act(self) -> np.ndarray:
        env = self.env
        cfg = self.cfg
        arm = env.arm
        n = env.n

        q_pred = np.clip(env.q + pending_motion(env.pipeline),
                         arm.q_lo, arm.q_hi)
        fr = arm.fk(q_pred)
        edge = fr.edge_rb
        chi = fr.chi
        turn = q_pred[:, 0]

        rock_w = env.rock.pos
        rock_r = np.hypot(rock_w[:, 0], rock_w[:, 1])
        rock_z = rock_w[:, 2]
        bound = env.rock.bound_radius
        bearing = np.arctan2(rock_w[:, 1], rock_w[:, 0])
        err = _wrap(bearing - turn)

        # control tracks the predicted pose, but phase changes gate on the
        # realized one: with a long command queue the prediction runs well
        # ahead, and switching targets early cuts corners through the rock
        rock_y_now = rotz_apply_inv(env.q[:, 0], rock_w)[:, 1]
        edge_now = env.frames.edge_rb

        ph = self.phase
        go = (ph == ALIGN) & (np.abs(rock_y_now) < cfg.align_tol)
        self.insert_r = np.where(
            go, np.minimum(rock_r + bound + cfg.insert_margin, cfg.reach_max),
            self.insert_r,
        )
        ph = np.where(go, APPROACH, ph)

        z_top = rock_z + bound
        z_app = np.clip(z_top + cfg.approach_clear, 0.55, 1.35)
        parked = (np.abs(edge_now[:, 0] - self.insert_r) < 0.15) \
            & (np.abs(edge_now[:, 2] - z_app) < 0.18)
        ph = np.where((ph == APPROACH) & parked, LOWER, ph)

        target_z = -cfg.dig_depth
        deep = edge_now[:, 2] <= target_z + 0.02
        if cfg.probe_tau > 0.0:
            resist = np.abs(env.tau[:, 1] - arm.joint_torques(env.q)[:, 1])
            trip = (resist > cfg.probe_tau) & (edge_now[:, 2] < -0.015)
        else:
            trip = np.zeros(n, dtype=bool)
        go = (ph == LOWER) & (deep | trip)
        # a probe stop means the bite is shallower than planned; a shallow
        # pass herds the rock instead of biting under it, so sweep the
        # whole arc rather than trusting the first capture
        self.tripped = np.where(go, trip & ~deep, self.tripped)
        self.dig_z = np.where(go, np.clip(edge_now[:, 2], target_z, -0.02),
                              self.dig_z)
        self.pull_r = np.where(
            go,
            np.where(trip & ~deep, cfg.pull_floor,
                     np.maximum(cfg.pull_floor, rock_r - cfg.pull_back)),
            self.pull_r,
        )
        ph = np.where(go, DRAG, ph)

        captured = arm.in_shovel(env.frames, rock_w)
        passed = edge_now[:, 0] <= rock_r - cfg.pass_margin
        inner = edge_now[:, 0] <= self.pull_r + 0.1
        drag_over = np.where(self.tripped, inner, captured | passed | inner)
        ph = np.where((ph == DRAG) & drag_over, CURL, ph)
        # a plowed rock riding the bucket upward during the approach would
        # drag the staging height up with it; scoop it instead. The rise
        # gate keeps grazing contact from triggering a premature curl
        riding = captured & (rock_z > env.rock_z0 + 0.08)
        ph = np.where((ph == APPROACH) & riding, CURL, ph)
        ph = np.where((ph == CURL) & (chi >= cfg.curl_target), LIFT, ph)

        self.phase = ph

        # the approach rises to the staging height before traversing out;
        # a single diagonal would sag through the rock and plow it
        self.over = (self.over | (np.abs(edge_now[:, 2] - z_app) < 0.15)) \
            & (ph == APPROACH)
        drag = ph == DRAG
        rising = (ph == APPROACH) & ~self.over
        r_t = np.where(drag, self.pull_r, self.insert_r)
        r_t = np.where(rising, np.minimum(self.insert_r, 3.25), r_t)
        # the descent aims past the handover depth: a P controller settles
        # short of its target, and settling short must still cross the line
        z_t = np.select(
            [ph == APPROACH, ph == LOWER, drag],
            [z_app, np.full(n, target_z - 0.035), self.dig_z], default=0.6,
        )
        chi_t = np.select(
            [ph == APPROACH, ph == LOWER, drag],
            [-0.10, -0.15, -0.05], default=0.0,
        )

        # damped least squares on a numeric jacobian: the edge then tracks
        # straight task-space lines, which joint-space stepping does not
        hstep = 1e-5
        jac = np.empty((n, 3, 4))
        for j, col in enumerate((1, 2, 3, 4)):
            qh = q_pred.copy()
            qh[:, col] += hstep
            fh = arm.fk(qh)
            jac[:, 0, j] = (fh.edge_rb[:, 0] - edge[:, 0]) / hstep
            jac[:, 1, j] = (fh.edge_rb[:, 2] - edge[:, 2]) / hstep
            jac[:, 2, j] = (fh.chi - chi) / hstep

        err_r = r_t - edge[:, 0]
        err_z = z_t - edge[:, 2]
        err_chi = chi_t - chi
        v_cap = np.select(
            [ph == APPROACH, ph == LOWER, drag],
            [0.85, 0.4, 0.5], default=0.0,
        )
        v_lin = cfg.task_gain * np.stack([err_r, err_z], axis=1)
        v_norm = np.sqrt(np.sum(v_lin * v_lin, axis=1))
        v_lin *= (np.minimum(v_norm, v_cap) / np.maximum(v_norm, 1e-9))[:, None]
        w_chi = np.clip(cfg.chi_gain * err_chi, -0.6, 0.6) * (v_cap > 0.0)
        rhs = np.stack([v_lin[:, 0], v_lin[:, 1], w_chi], axis=1)

        jjt = np.einsum("nij,nkj->nik", jac, jac)
        jjt[:, 0, 0] += 2.5e-3
        jjt[:, 1, 1] += 2.5e-3
        jjt[:, 2, 2] += 2.5e-3
        sol = np.einsum("nij,nj->ni", inv3(jjt), rhs)
        rates = np.einsum("nji,nj->ni", jac, sol)
        rates = np.clip(rates, -arm.qd_max[1:], arm.qd_max[1:])

        # lift the dominant joint over its deadband while the target is
        # still away, or the last stretch would be silently dropped
        rel = np.max(np.abs(rates) / arm.deadband[1:], axis=1)
        away = (np.hypot(err_r, err_z) > 0.03) | (np.abs(err_chi) > 0.05)
        bump = np.where((rel < 1.3) & away & (rel > 1e-9) & (v_cap > 0.0),
                        1.3 / np.maximum(rel, 1e-9), 1.0)
        rates *= bump[:, None]

        tracked = np.zeros((n, 5))
        tracked[:, 1:] = np.clip(rates / arm.qd_max[1:], -1.0, 1.0)

        # heading control runs in every phase; commands below the turn
        # deadband would be dropped, so bump small corrections above it
        a_turn = np.clip(cfg.turn_gain * err / arm.qd_max[0], -1.0, 1.0)
        a_turn = np.where(
            np.abs(err) > 0.006,
            np.sign(a_turn) * np.maximum(np.abs(a_turn), 0.12), 0.0,
        )
        turn_cap = np.where(ph == ALIGN, 0.5, 0.3)
        a_turn = np.clip(a_turn, -turn_cap, turn_cap)

        a = tracked
        a[:, 0] = a_turn

        curl_rows = ph == CURL
        a[curl_rows, 1] = -0.12
        a[curl_rows, 2] = 0.0
        a[curl_rows, 3] = 0.0
        a[curl_rows, 4] = 0.85

        lift_rows = ph == LIFT
        pivot_z = fr.pivot_rb[:, 2]
        a[lift_rows, 1] = np.where(pivot_z[lift_rows] < cfg.lift_pivot_z,
                                   -0.4, -0.05)
        a[lift_rows, 2] = 0.0
        a[lift_rows, 3] = 0.0
        a[lift_rows, 4] = np.where(chi[lift_rows] < 0.95, 0.45, 0.05)

        # governor: scale arm channels so the commanded edge speed stays
        # under the overspeed cut (the cabin turn does not move edge_rb)
        dt = env.cfg.timing.dt_control
        rates = a * arm.qd_max[None, :]
        q_next = np.clip(q_pred + rates * dt, arm.q_lo, arm.q_hi)
        v_cmd = np.linalg.norm(arm.fk(q_next).edge_rb - edge, axis=1) / dt
        scale = np.minimum(1.0, 0.95 / np.maximum(v_cmd, 1e-9))
        a[:, 1:] *= scale[:, None]
        return a


def run_scripted(env: BatchEnv, policy: ScriptedPolicy | None = None,
                 episodes: int = 100, collect=None) -> dict:
    """Drive env with the controller until enough episodes finish."""
    policy = policy or ScriptedPolicy(env)
    causes = np.zeros(9, dtype=np.int64)
    finished = 0
    successes = 0
    steps = 0
    while finished < episodes:
        actions = policy.act()
        _, _, done, info = env.step(actions)
        steps += 1
        if collect is not None:
            collect(env, actions, done, info)
        idx = np.flatnonzero(done)
        finished += len(idx)
        successes += int(np.sum(info["success"]))
        for c in info["cause"][idx]:
            causes[c] += 1
        policy.notify_done(done)
    return {
        "episodes": finished,
        "successes": successes,
        "success_rate": successes / max(finished, 1),
        "causes": causes,
        "steps": steps,
    }
