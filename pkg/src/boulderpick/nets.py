"""Actor-critic network: two float64 MLPs plus a state-independent log-std.

Actor and critic share a shape (hidden layers of 256, leaky ReLU) but no
parameters. Everything is plain numpy; gradients are hand-derived in the
optimizer module, so the forward pass here also exposes its layer
activations. Checkpoints are npz files with a JSON header carrying a
format version, the observation layout hash, and the hyperparameters,
so a loader can refuse a stale or foreign file before touching weights.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
LEAK = 0.01


def leaky_relu(x):
    return np.where(x > 0.0, x, LEAK * x)


def leaky_relu_grad(x):
    return np.where(x > 0.0, 1.0, LEAK)


def _init_mlp(rng, sizes, out_scale):
    """He-style scaled-normal init, elementwise (no BLAS in the seed path)."""
    params = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = out_scale / np.sqrt(fan_in) if i == len(sizes) - 2 else np.sqrt(2.0 / fan_in)
        w = rng.standard_normal((fan_in, fan_out)) * scale
        b = np.zeros(fan_out)
        params.append((w, b))
    return params


class PolicyNet:
    """Gaussian policy over 5 joint-rate actions plus a value head."""

    def __init__(self, obs_dim: int, act_dim: int = 5, hidden=(256, 256),
                 init_std: float = 0.4, seed: int = 0):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.init_std = float(init_std)
        rng = np.random.default_rng([seed, 97])
        a_sizes = (self.obs_dim,) + self.hidden + (self.act_dim,)
        c_sizes = (self.obs_dim,) + self.hidden + (1,)
        self.p = {}
        for i, (w, b) in enumerate(_init_mlp(rng, a_sizes, out_scale=0.01)):
            self.p[f"aw{i}"] = w
            self.p[f"ab{i}"] = b
        for i, (w, b) in enumerate(_init_mlp(rng, c_sizes, out_scale=1.0)):
            self.p[f"cw{i}"] = w
            self.p[f"cb{i}"] = b
        self.p["log_std"] = np.full(self.act_dim, np.log(self.init_std))
        self.n_layers = len(self.hidden) + 1

    # ---------------------------------------------------------------- forward

    def _mlp(self, x, prefix):
        """Returns (output, cache); cache holds inputs and pre-activations."""
        acts = [x]
        pre = []
        h = x
        for i in range(self.n_layers):
            z = h @ self.p[f"{prefix}w{i}"] + self.p[f"{prefix}b{i}"]
            pre.append(z)
            if i < self.n_layers - 1:
                h = leaky_relu(z)
                acts.append(h)
        return pre[-1], (acts, pre)

    def actor_mean(self, obs):
        return self._mlp(np.asarray(obs, dtype=np.float64), "a")[0]

    def value(self, obs):
        return self._mlp(np.asarray(obs, dtype=np.float64), "c")[0][..., 0]

    @property
    def std(self):
        return np.exp(self.p["log_std"])

    def log_prob(self, mean, actions):
        z = (actions - mean) / self.std
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.p["log_std"]) \
            - 0.5 * self.act_dim * np.log(2.0 * np.pi)

    def entropy(self) -> float:
        """Entropy of the action Gaussian (state independent)."""
        return float(np.sum(self.p["log_std"]) + 0.5 * self.act_dim * (1.0 + np.log(2.0 * np.pi)))

    def act(self, obs, rng):
        """Sample actions; returns (actions, log_prob, value, mean)."""
        mean = self.actor_mean(obs)
        noise = rng.standard_normal(mean.shape)
        actions = mean + self.std * noise
        return actions, self.log_prob(mean, actions), self.value(obs), mean

    # ------------------------------------------------------------- checkpoint

    def save(self, path, layout_hash: str, extra: dict | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "version": CHECKPOINT_VERSION,
            "layout_hash": layout_hash,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "hidden": list(self.hidden),
            "init_std": self.init_std,
        }
        if extra:
            header["extra"] = extra
        arrays = {k: v for k, v in self.p.items()}
        arrays["header"] = np.array(json.dumps(header, sort_keys=True))
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, expect_layout_hash: str | None = None) -> "PolicyNet":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(
                    f"checkpoint version {header.get('version')} unsupported "
                    f"(expected {CHECKPOINT_VERSION})"
                )
            if expect_layout_hash is not None and header["layout_hash"] != expect_layout_hash:
                raise ValueError(
                    "checkpoint was trained against a different observation "
                    f"layout ({header['layout_hash'][:12]}… vs "
                    f"{expect_layout_hash[:12]}…)"
                )
            net = cls(
                header["obs_dim"],
                header["act_dim"],
                tuple(header["hidden"]),
                header["init_std"],
            )
            for k in net.p:
                net.p[k] = z[k].astype(np.float64)
        net.layout_hash = header["layout_hash"]
        net.header = header
        return net
