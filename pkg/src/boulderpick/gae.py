"""Generalized advantage estimation over batched rollouts.

Plain backward recursion in float64. Advantages come back raw; the
trainer normalizes per rollout so the one-step and Monte-Carlo limits
stay exact and testable here.
"""

from __future__ import annotations

import numpy as np


def gae(rewards, values, dones, gamma: float, lam: float):
    """Advantages and value targets for a (T, N) rollout.

    values must carry one extra row: the bootstrap value of the state
    after the last step. dones marks steps that ended an episode; the
    bootstrap through a terminal step is cut, including timeouts (the
    env gives no terminal-state value to bootstrap from).

    Returns (advantages, returns), both (T, N); returns = advantages
    + values[:-1].
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones)
    if rewards.ndim == 1:
        squeeze = True
        rewards = rewards[:, None]
        values = values[:, None]
        dones = dones[:, None]
    else:
        squeeze = False
    t_len, n = rewards.shape
    if values.shape != (t_len + 1, n):
        raise ValueError(
            f"values must be (T+1, N) = {(t_len + 1, n)}, got {values.shape}"
        )
    if dones.shape != (t_len, n):
        raise ValueError(f"dones must match rewards {(t_len, n)}, got {dones.shape}")

    live = 1.0 - dones.astype(np.float64)
    adv = np.zeros((t_len, n))
    carry = np.zeros(n)
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] * live[t] - values[t]
        carry = delta + gamma * lam * live[t] * carry
        adv[t] = carry
    ret = adv + values[:-1]
    if squeeze:
        return adv[:, 0], ret[:, 0]
    return adv, ret


def normalize_advantages(adv, eps: float = 1e-8):
    """Zero-mean unit-std copy, over the whole batch."""
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + eps)
