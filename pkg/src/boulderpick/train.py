"""Iteration loop: collect a fixed-horizon rollout, estimate advantages,
run the clipped update, repeat.

Collection is vectorized across the environment batch; optimization runs
over the flattened arrays. The whole loop executes under a single-thread
cap so a fixed seed reproduces the metrics file byte for byte. Episode
statistics come from the environments' own rolling success window, the
same one the curriculum consults.
"""

from __future__ import annotations

import collections
import csv
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .batchenv import BatchEnv
from .config import TrainConfig
from .gae import gae, normalize_advantages
from .nets import PolicyNet
from .ppo import Adam, ppo_update

METRIC_FIELDS = (
    "iteration",
    "env_steps",
    "episodes",
    "success_rate",
    "mean_ep_return",
    "mean_ep_len",
    "level",
    "policy_loss",
    "value_loss",
    "entropy",
    "kl",
    "clip_frac",
    "grad_norm",
    "aborted",
)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Appends one CSV row per iteration, flushed as it goes.

    Floats are written with repr so two runs of the same build produce
    identical bytes.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(",".join(METRIC_FIELDS) + "\n")
        self._fh.flush()

    def write(self, rec: dict) -> None:
        self._fh.write(",".join(_fmt(rec[k]) for k in METRIC_FIELDS) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_metrics(path):
    """Loads a metrics file back into a list of per-iteration dicts."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out = {}
            for k, v in rec.items():
                if k in ("iteration", "env_steps", "episodes", "level", "aborted"):
                    out[k] = int(v)
                else:
                    out[k] = float(v)
            rows.append(out)
    return rows


def collect_rollout(env: BatchEnv, net: PolicyNet, obs, steps: int, rng,
                    ep_returns=None, ep_lens=None):
    """Runs the batch for `steps` control ticks under the current policy.

    Returns (rollout, next_obs, episodes_finished). rollout holds
    (T, N, ...) arrays plus the (N,) bootstrap value of next_obs.
    Finished-episode returns and lengths are appended to the optional
    deques as they complete.
    """
    n = env.n
    d = obs.shape[1]
    buf_obs = np.zeros((steps, n, d))
    buf_act = np.zeros((steps, n, net.act_dim))
    buf_logp = np.zeros((steps, n))
    buf_val = np.zeros((steps, n))
    buf_rew = np.zeros((steps, n))
    buf_done = np.zeros((steps, n), dtype=bool)
    episodes = 0
    for t in range(steps):
        actions, logp, value, _ = net.act(obs, rng)
        buf_obs[t] = obs
        buf_act[t] = actions
        buf_logp[t] = logp
        buf_val[t] = value
        obs, reward, done, info = env.step(actions)
        buf_rew[t] = reward
        buf_done[t] = done
        done_idx = np.flatnonzero(done)
        episodes += len(done_idx)
        if ep_returns is not None:
            for i in done_idx:
                ep_returns.append(float(info["ep_return"][i]))
                ep_lens.append(int(info["ep_len"][i]))
    rollout = {
        "obs": buf_obs,
        "actions": buf_act,
        "logp": buf_logp,
        "values": buf_val,
        "rewards": buf_rew,
        "dones": buf_done,
        "bootstrap": net.value(obs),
    }
    return rollout, obs, episodes


def _flatten(rollout, adv, returns):
    t, n = rollout["rewards"].shape
    return {
        "obs": rollout["obs"].reshape(t * n, -1),
        "actions": rollout["actions"].reshape(t * n, -1),
        "logp_old": rollout["logp"].reshape(t * n),
        "adv": adv.reshape(t * n),
        "returns": returns.reshape(t * n),
    }


def train(cfg: TrainConfig, env: BatchEnv, net: PolicyNet | None = None,
          on_iter=None):
    """Full training run; returns (net, metrics rows).

    Writes metrics.csv plus periodic and final checkpoints under
    cfg.out_dir. Zero iterations leaves the freshly initialized net
    untouched and still writes the final checkpoint. When
    cfg.stop_success_rate is positive, the loop stops early once the
    rolling success window is full and above that rate.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if net is None:
        net = PolicyNet(env.layout.size, 5, cfg.ppo.hidden, cfg.ppo.init_std,
                        seed=cfg.seed)
    opt = Adam(net.p, cfg.ppo.lr)
    rng = np.random.default_rng([cfg.seed, 31])
    writer = MetricsWriter(out_dir / "metrics.csv")
    ep_returns = collections.deque(maxlen=100)
    ep_lens = collections.deque(maxlen=100)
    metrics = []
    episodes_total = 0

    with threadpool_limits(limits=1):
        obs = env.reset_all()
        for it in range(1, cfg.iterations + 1):
            rollout, obs, n_eps = collect_rollout(
                env, net, obs, cfg.ppo.rollout_steps, rng, ep_returns, ep_lens
            )
            episodes_total += n_eps
            values = np.concatenate(
                [rollout["values"], rollout["bootstrap"][None, :]], axis=0
            )
            adv, returns = gae(
                rollout["rewards"], values, rollout["dones"],
                cfg.ppo.gamma, cfg.ppo.lam,
            )
            flat = _flatten(rollout, adv, returns)
            flat["adv"] = normalize_advantages(flat["adv"])
            stats = ppo_update(net, flat, cfg.ppo, opt, rng)

            rec = {
                "iteration": it,
                "env_steps": it * cfg.ppo.rollout_steps * env.n,
                "episodes": episodes_total,
                "success_rate": float(env.curriculum.success_rate),
                "mean_ep_return": float(np.mean(ep_returns)) if ep_returns
                else float("nan"),
                "mean_ep_len": float(np.mean(ep_lens)) if ep_lens
                else float("nan"),
                "level": int(env.active_level),
                "policy_loss": float(stats["policy_loss"]),
                "value_loss": float(stats["value_loss"]),
                "entropy": float(stats["entropy"]),
                "kl": float(stats["kl"]),
                "clip_frac": float(stats["clip_frac"]),
                "grad_norm": float(stats["grad_norm"]),
                "aborted": int(stats["aborted"]),
            }
            metrics.append(rec)
            writer.write(rec)
            if on_iter is not None:
                on_iter(rec)
            if cfg.checkpoint_every > 0 and it % cfg.checkpoint_every == 0:
                net.save(out_dir / f"ckpt_{it:06d}.npz", env.layout.layout_hash,
                         extra={"iteration": it, "seed": cfg.seed})
            window_full = (
                env.curriculum.state_dict()["count"] >= env.curriculum.window
            )
            if (
                cfg.stop_success_rate > 0.0
                and window_full
                and env.curriculum.success_rate > cfg.stop_success_rate
            ):
                break

    net.save(out_dir / "ckpt_final.npz", env.layout.layout_hash,
             extra={"iteration": len(metrics), "seed": cfg.seed})
    writer.close()
    return net, metrics
