"""Clipped-surrogate policy optimization with hand-derived gradients.

The loss is the standard clipped ratio surrogate plus a value-error term
and an entropy bonus; gradients run through the two MLPs analytically
(the finite-difference test in the suite checks every parameter). A
non-finite loss or gradient anywhere in an update aborts the whole
update and restores the parameters from before it.
"""

from __future__ import annotations

import numpy as np

from .config import PpoConfig
from .nets import PolicyNet, leaky_relu_grad


def _mlp_backward(net: PolicyNet, prefix: str, cache, d_out, grads) -> None:
    """Accumulate dLoss/dparams for one MLP given dLoss/d(output)."""
    acts, pre = cache
    g = d_out
    for i in range(net.n_layers - 1, -1, -1):
        grads[f"{prefix}w{i}"] += acts[i].T @ g
        grads[f"{prefix}b{i}"] += np.sum(g, axis=0)
        if i > 0:
            g = (g @ net.p[f"{prefix}w{i}"].T) * leaky_relu_grad(pre[i - 1])


def loss_and_grads(net: PolicyNet, batch: dict, cfg: PpoConfig):
    """Total loss, parameter gradients, and reporting stats for one minibatch.

    batch: obs (B,D), actions (B,K), logp_old (B,), adv (B,), returns (B,).
    """
    obs = batch["obs"]
    actions = batch["actions"]
    logp_old = batch["logp_old"]
    adv = batch["adv"]
    ret = batch["returns"]
    b = obs.shape[0]

    mean, a_cache = net._mlp(obs, "a")
    v_raw, c_cache = net._mlp(obs, "c")
    v = v_raw[:, 0]
    std = net.std
    z = (actions - mean) / std
    logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(net.p["log_std"]) \
        - 0.5 * net.act_dim * np.log(2.0 * np.pi)

    ratio = np.exp(logp - logp_old)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_loss = -np.mean(np.minimum(s1, s2))
    value_loss = np.mean((v - ret) ** 2)
    entropy = net.entropy()
    total = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy

    # d total / d logp: gradient flows only where the unclipped branch is
    # the active minimum (inside the clip band both branches coincide)
    unclipped = s1 <= s2
    d_logp = np.where(unclipped, -adv * ratio, 0.0) / b
    d_mean = d_logp[:, None] * (z / std)
    d_logstd = np.sum(d_logp[:, None] * (z * z - 1.0), axis=0)
    d_logstd = d_logstd - cfg.ent_coef * np.ones(net.act_dim)
    d_v = cfg.vf_coef * 2.0 * (v - ret) / b

    grads = {k: np.zeros_like(p) for k, p in net.p.items()}
    grads["log_std"] += d_logstd
    _mlp_backward(net, "a", a_cache, d_mean, grads)
    _mlp_backward(net, "c", c_cache, d_v[:, None], grads)

    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "total_loss": float(total),
        "kl": float(np.mean(logp_old - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
    }
    return total, grads, stats


def total_loss(net: PolicyNet, batch: dict, cfg: PpoConfig) -> float:
    """The scalar objective alone (finite-difference test hook)."""
    return loss_and_grads(net, batch, cfg)[0]


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the raw norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params: dict, lr: float, b1: float = 0.9,
                 b2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def ppo_update(net: PolicyNet, rollout: dict, cfg: PpoConfig, opt: Adam, rng):
    """Run the clipped update over one rollout; returns reporting stats.

    rollout holds flat arrays (B, ...) with already-normalized advantages.
    Minibatch order comes from rng, so a fixed seed fixes the whole update.
    """
    b = rollout["obs"].shape[0]
    snapshot = {k: v.copy() for k, v in net.p.items()}
    opt_snapshot = (opt.t, {k: v.copy() for k, v in opt.m.items()},
                    {k: v.copy() for k, v in opt.v.items()})
    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
           "kl": 0.0, "clip_frac": 0.0, "grad_norm": 0.0}
    n_batches = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(b)
        for idx in np.array_split(perm, cfg.minibatches):
            batch = {k: rollout[k][idx] for k in
                     ("obs", "actions", "logp_old", "adv", "returns")}
            loss, grads, stats = loss_and_grads(net, batch, cfg)
            finite = np.isfinite(loss) and all(
                np.all(np.isfinite(g)) for g in grads.values()
            )
            if not finite:
                net.p.update(snapshot)
                opt.t, opt.m, opt.v = opt_snapshot
                return {**agg, "aborted": True, "updates": n_batches}
            agg["grad_norm"] += clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(net.p, grads)
            for k in ("policy_loss", "value_loss", "entropy", "kl", "clip_frac"):
                agg[k] += stats[k]
            n_batches += 1
    for k in agg:
        agg[k] /= max(n_batches, 1)
    agg["aborted"] = False
    agg["updates"] = n_batches
    return agg
