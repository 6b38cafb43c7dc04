"""Desk-scale training run: 256 environments, level 0 pinned, early stop
once the rolling success window is full and above the advancement
threshold. Reuses the on-disk dataset and start-state cache when present,
so reruns are cheap and the whole run is reproducible from the recorded
config snapshot.
"""

import argparse
import dataclasses
import time
from pathlib import Path

from boulderpick.batchenv import BatchEnv
from boulderpick.config import TrainConfig, save_config
from boulderpick.resetcache import load_or_build
from boulderpick.rockgen import load_dataset, sample_dataset, save_dataset
from boulderpick.train import train

CACHE_SEED_BASE = 100


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--lr", type=float, default=None)
    ap.add_argument("--gamma", type=float, default=None)
    ap.add_argument("--lam", type=float, default=None)
    args = ap.parse_args()

    cfg = TrainConfig(
        stop_success_rate=0.80,
        pin_level=0,
        iterations=args.iters,
        seed=args.seed,
        rocks_dir="data/rocks",
        cache_dir="data/cache",
        out_dir=args.out,
    )
    overrides = {
        k: v for k, v in (("lr", args.lr), ("gamma", args.gamma), ("lam", args.lam))
        if v is not None
    }
    if overrides:
        cfg = dataclasses.replace(
            cfg, ppo=dataclasses.replace(cfg.ppo, **overrides))
    rocks_dir = Path(cfg.rocks_dir)
    if not (rocks_dir / "manifest.json").exists():
        rocks, splits = sample_dataset(cfg.env.rocks, seed=cfg.seed)
        save_dataset(rocks, splits, cfg.env.rocks, cfg.seed, rocks_dir)
        print(f"dataset written to {rocks_dir}", flush=True)
    rset = load_dataset(rocks_dir)
    t0 = time.time()
    cache = load_or_build(
        cfg.env, 0, rset, CACHE_SEED_BASE + 0, cfg.cache_dir,
        size=cfg.env.reset.cache_size,
    )
    print(f"level-0 cache ready ({len(cache)} rows, {time.time()-t0:.0f}s)",
          flush=True)

    env = BatchEnv(cfg.env, cfg.num_envs, rset, {0: cache}, seed=cfg.seed,
                   pin_level=0)
    save_config(cfg, Path(cfg.out_dir) / "config.yaml")

    t0 = time.time()

    def log(rec):
        if rec["iteration"] % 10 == 0 or rec["iteration"] == 1:
            print(
                f"[{time.time()-t0:7.0f}s] it {rec['iteration']:4d} "
                f"sr {rec['success_rate']:.3f} ret {rec['mean_ep_return']:8.2f} "
                f"len {rec['mean_ep_len']:6.1f} kl {rec['kl']:.4f} "
                f"clip {rec['clip_frac']:.3f} eps {rec['episodes']}",
                flush=True,
            )

    net, metrics = train(cfg, env, on_iter=log)
    last = metrics[-1] if metrics else None
    if last is not None:
        print(
            f"done: {last['iteration']} iterations, "
            f"success {last['success_rate']:.3f}, "
            f"wall {time.time()-t0:.0f}s",
            flush=True,
        )


if __name__ == "__main__":
    main()
