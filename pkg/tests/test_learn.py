"""Learning stack: advantage estimation, the clipped update, checkpoints,
and the small end-to-end training contracts (zero iterations is a no-op,
fixed seeds reproduce metrics byte for byte, a poisoned batch aborts the
update without touching parameters).
"""

import numpy as np
import pytest

from boulderpick.batchenv import BatchEnv
from boulderpick.config import EnvConfig, PpoConfig, RockGenConfig, TrainConfig
from boulderpick.gae import gae, normalize_advantages
from boulderpick.nets import PolicyNet
from boulderpick.ppo import Adam, clip_grad_norm, loss_and_grads, ppo_update, total_loss
from boulderpick.resetcache import build_cache
from boulderpick.rockgen import rockset_from_meshes, sample_dataset
from boulderpick.train import collect_rollout, read_metrics, train


def gae_oracle(rewards, values, dones, gamma, lam):
    """Direct double loop over the definition, one env column at a time."""
    t_len = len(rewards)
    adv = np.zeros(t_len)
    for t in range(t_len):
        acc = 0.0
        weight = 1.0
        for k in range(t, t_len):
            live_k = 1.0 - float(dones[k])
            delta = rewards[k] + gamma * values[k + 1] * live_k - values[k]
            acc += weight * delta
            weight *= gamma * lam * live_k
            if weight == 0.0:
                break
        adv[t] = acc
    return adv


# -------------------------------------------------------------------- gae


def test_gae_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        t_len = int(rng.integers(1, 101))
        gamma = rng.uniform(0.5, 1.0)
        lam = rng.uniform(0.0, 1.0)
        rewards = rng.normal(size=t_len)
        values = rng.normal(size=t_len + 1)
        dones = rng.random(t_len) < 0.15
        adv, ret = gae(rewards, values, dones, gamma, lam)
        ref = gae_oracle(rewards, values, dones, gamma, lam)
        np.testing.assert_allclose(adv, ref, atol=1e-10)
        np.testing.assert_allclose(ret, ref + values[:-1], atol=1e-10)


def test_gae_lambda_zero_is_one_step_td():
    rng = np.random.default_rng(1)
    rewards = rng.normal(size=(30, 4))
    values = rng.normal(size=(31, 4))
    dones = rng.random((30, 4)) < 0.2
    adv, _ = gae(rewards, values, dones, 0.97, 0.0)
    live = 1.0 - dones.astype(float)
    delta = rewards + 0.97 * values[1:] * live - values[:-1]
    np.testing.assert_array_equal(adv, delta)


def test_gae_monte_carlo_limit():
    # gamma = lam = 1 over a single unbroken episode: advantage is the
    # undiscounted return-to-go minus the value baseline
    rng = np.random.default_rng(2)
    rewards = rng.normal(size=40)
    values = rng.normal(size=41)
    dones = np.zeros(40, dtype=bool)
    dones[-1] = True
    adv, _ = gae(rewards, values, dones, 1.0, 1.0)
    tail = np.cumsum(rewards[::-1])[::-1]
    np.testing.assert_allclose(adv, tail - values[:-1], atol=1e-10)


def test_gae_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        gae(np.zeros(5), np.zeros(5), np.zeros(5, dtype=bool), 0.99, 0.95)
    with pytest.raises(ValueError):
        gae(np.zeros((5, 2)), np.zeros((6, 2)), np.zeros((4, 2), dtype=bool), 0.99, 0.95)


def test_normalize_advantages_zero_mean_unit_std():
    rng = np.random.default_rng(3)
    adv = rng.normal(3.0, 7.0, size=500)
    out = normalize_advantages(adv)
    assert abs(out.mean()) < 1e-12
    assert abs(out.std() - 1.0) < 1e-6


# ------------------------------------------------------------ loss + grads


def toy_batch(net, rng, b=6):
    obs = rng.normal(size=(b, net.obs_dim))
    actions = rng.normal(size=(b, net.act_dim))
    logp_old = net.log_prob(net.actor_mean(obs), actions) + rng.normal(0.0, 0.1, b)
    return {
        "obs": obs,
        "actions": actions,
        "logp_old": logp_old,
        "adv": rng.normal(size=b),
        "returns": rng.normal(size=b),
    }


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    net = PolicyNet(obs_dim=2, act_dim=1, hidden=(1,), init_std=0.5, seed=11)
    cfg = PpoConfig()
    batch = toy_batch(net, rng)
    _, grads, _ = loss_and_grads(net, batch, cfg)
    h = 1e-6
    for key, g in grads.items():
        g = np.atleast_1d(g)
        flat = net.p[key].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = total_loss(net, batch, cfg)
            flat[i] = keep - h
            dn = total_loss(net, batch, cfg)
            flat[i] = keep
            fd = (up - dn) / (2 * h)
            an = g.reshape(-1)[i]
            assert abs(an - fd) <= 1e-4 * max(1.0, abs(fd)), (key, i, an, fd)


def test_surrogate_flat_in_ratio_when_clip_binds():
    # negative advantage with the ratio far below the band: the pessimistic
    # min() picks the clipped branch, which is constant in the ratio, so
    # the sample contributes no policy gradient at all
    net = PolicyNet(obs_dim=2, act_dim=1, hidden=(1,), init_std=0.5, seed=13)
    rng = np.random.default_rng(5)
    cfg = PpoConfig(ent_coef=0.0, vf_coef=0.0)
    obs = rng.normal(size=(3, 2))
    actions = rng.normal(size=(3, 1))
    logp = net.log_prob(net.actor_mean(obs), actions)
    batch = {
        "obs": obs,
        "actions": actions,
        "logp_old": logp + 2.0,   # ratio ~ e^-2, far below 1 - clip
        "adv": -np.ones(3),
        "returns": np.zeros(3),
    }
    _, grads, stats = loss_and_grads(net, batch, cfg)
    assert stats["clip_frac"] == 1.0
    for key, g in grads.items():
        np.testing.assert_allclose(g, 0.0, atol=1e-15, err_msg=key)
    # same geometry on the other side: ratio far above the band with a
    # positive advantage is equally flat
    batch["logp_old"] = logp - 2.0
    batch["adv"] = np.ones(3)
    _, grads, stats = loss_and_grads(net, batch, cfg)
    assert stats["clip_frac"] == 1.0
    for key, g in grads.items():
        np.testing.assert_allclose(g, 0.0, atol=1e-15, err_msg=key)


def test_unit_ratio_gradient_is_vanilla_policy_gradient():
    # with logp_old equal to the current logp the ratio is exactly one,
    # the clip is inactive, and d total / d mean reduces to the plain
    # advantage-weighted score function
    net = PolicyNet(obs_dim=2, act_dim=2, hidden=(2,), init_std=0.4, seed=17)
    rng = np.random.default_rng(6)
    cfg = PpoConfig(ent_coef=0.0, vf_coef=0.0)
    obs = rng.normal(size=(5, 2))
    actions = rng.normal(size=(5, 2))
    mean = net.actor_mean(obs)
    batch = {
        "obs": obs,
        "actions": actions,
        "logp_old": net.log_prob(mean, actions),
        "adv": rng.normal(size=5),
        "returns": np.zeros(5),
    }
    _, grads, stats = loss_and_grads(net, batch, cfg)
    assert stats["clip_frac"] == 0.0
    assert abs(stats["kl"]) < 1e-12

    # score-function oracle, assembled per sample without the ratio
    eps = 1e-6
    for key in ("aw0", "ab0", "aw1", "ab1", "log_std"):
        flat = net.p[key].reshape(-1)
        g = np.atleast_1d(grads[key]).reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            lp_up = net.log_prob(net.actor_mean(obs), actions)
            flat[i] = keep - eps
            lp_dn = net.log_prob(net.actor_mean(obs), actions)
            flat[i] = keep
            dlp = (lp_up - lp_dn) / (2 * eps)
            ref = -np.mean(batch["adv"] * dlp)
            assert abs(g[i] - ref) <= 1e-4 * max(1.0, abs(ref)), (key, i)


def test_zero_advantage_moves_only_value_and_entropy():
    net = PolicyNet(obs_dim=3, act_dim=2, hidden=(4,), init_std=0.4, seed=19)
    rng = np.random.default_rng(7)
    batch = toy_batch(net, rng, b=8)
    batch["adv"] = np.zeros(8)
    cfg = PpoConfig()
    _, grads, stats = loss_and_grads(net, batch, cfg)
    assert stats["policy_loss"] == 0.0
    for key in ("aw0", "ab0", "aw1", "ab1"):
        np.testing.assert_allclose(grads[key], 0.0, atol=1e-15, err_msg=key)
    assert np.any(grads["cw0"] != 0.0)
    # entropy bonus still pushes the log-std up
    np.testing.assert_allclose(grads["log_std"], -cfg.ent_coef, atol=1e-15)


def test_entropy_monotone_in_std():
    ent = []
    for sigma in (0.1, 0.2, 0.4, 0.8, 1.6):
        net = PolicyNet(obs_dim=2, act_dim=3, hidden=(2,), init_std=sigma, seed=23)
        ent.append(net.entropy())
    assert np.all(np.diff(ent) > 0.0)


def test_clip_grad_norm_rescales_in_place():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[0.0, 4.0]])}
    raw = clip_grad_norm(grads, 1.0)
    assert raw == pytest.approx(5.0)
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert total == pytest.approx(1.0)
    grads = {"a": np.array([0.3, 0.4])}
    raw = clip_grad_norm(grads, 1.0)
    assert raw == pytest.approx(0.5)
    np.testing.assert_allclose(grads["a"], [0.3, 0.4])


def test_adam_first_step_is_signed_lr():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    opt = Adam(params, lr=0.01)
    opt.step(params, {"w": np.array([0.5, -0.25, 1e-3])})
    np.testing.assert_allclose(
        params["w"], [1.0 - 0.01, -2.0 + 0.01, 3.0 - 0.01], rtol=1e-5
    )


# ------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip_is_exact(tmp_path):
    net = PolicyNet(obs_dim=7, act_dim=5, hidden=(8, 8), init_std=0.4, seed=29)
    path = tmp_path / "net.npz"
    net.save(path, layout_hash="abc123")
    back = PolicyNet.load(path, expect_layout_hash="abc123")
    rng = np.random.default_rng(8)
    probe = rng.normal(size=(16, 7))
    np.testing.assert_array_equal(net.actor_mean(probe), back.actor_mean(probe))
    np.testing.assert_array_equal(net.value(probe), back.value(probe))
    for k in net.p:
        np.testing.assert_array_equal(net.p[k], back.p[k])


def test_checkpoint_rejects_wrong_layout(tmp_path):
    net = PolicyNet(obs_dim=4, act_dim=5, hidden=(4,), init_std=0.4, seed=31)
    path = tmp_path / "net.npz"
    net.save(path, layout_hash="layout-a")
    with pytest.raises(ValueError, match="layout"):
        PolicyNet.load(path, expect_layout_hash="layout-b")


def test_checkpoint_rejects_wrong_version(tmp_path):
    import json

    net = PolicyNet(obs_dim=4, act_dim=5, hidden=(4,), init_std=0.4, seed=37)
    path = tmp_path / "net.npz"
    net.save(path, layout_hash="x")
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(str(arrays["header"]))
    header["version"] = header["version"] + 1
    arrays["header"] = np.array(json.dumps(header))
    np.savez(path, **arrays)
    with pytest.raises(ValueError, match="version"):
        PolicyNet.load(path)


# ------------------------------------------------------------ ppo_update


def fixed_rollout(net, rng, b=64):
    obs = rng.normal(size=(b, net.obs_dim))
    actions = rng.normal(size=(b, net.act_dim))
    return {
        "obs": obs,
        "actions": actions,
        "logp_old": net.log_prob(net.actor_mean(obs), actions),
        "adv": rng.normal(size=b),
        "returns": rng.normal(size=b),
    }


def test_update_runs_all_minibatches():
    net = PolicyNet(obs_dim=6, act_dim=5, hidden=(8,), init_std=0.4, seed=41)
    cfg = PpoConfig()
    opt = Adam(net.p, cfg.lr)
    rng = np.random.default_rng(9)
    stats = ppo_update(net, fixed_rollout(net, rng), cfg, opt, rng)
    assert stats["aborted"] is False
    assert stats["updates"] == cfg.epochs * cfg.minibatches
    assert np.isfinite(stats["kl"])


def test_poisoned_batch_aborts_and_keeps_parameters():
    net = PolicyNet(obs_dim=6, act_dim=5, hidden=(8,), init_std=0.4, seed=43)
    cfg = PpoConfig()
    opt = Adam(net.p, cfg.lr)
    rng = np.random.default_rng(10)
    rollout = fixed_rollout(net, rng)
    rollout["returns"][7] = np.nan
    before = {k: v.copy() for k, v in net.p.items()}
    stats = ppo_update(net, rollout, cfg, opt, rng)
    assert stats["aborted"] is True
    for k in before:
        np.testing.assert_array_equal(net.p[k], before[k])
    assert opt.t == 0


# ------------------------------------------------------- end-to-end train


@pytest.fixture(scope="module")
def small_world():
    rocks, splits = sample_dataset(RockGenConfig(n_train=6, n_eval_large=2), seed=0)
    rset = rockset_from_meshes(rocks, splits)
    cfg = EnvConfig()
    cache = build_cache(cfg, 0, rset, seed=123, size=16, batch=64)
    return cfg, rset, cache


def make_train_cfg(out_dir, **kw):
    base = dict(num_envs=8, iterations=2, seed=3, pin_level=0,
                checkpoint_every=0, out_dir=str(out_dir))
    base.update(kw)
    return TrainConfig(**base)


def test_zero_iterations_keeps_fresh_init(small_world, tmp_path):
    cfg, rset, cache = small_world
    tcfg = make_train_cfg(tmp_path / "z", iterations=0)
    env = BatchEnv(cfg, tcfg.num_envs, rset, {0: cache}, seed=tcfg.seed, pin_level=0)
    net, metrics = train(tcfg, env)
    assert metrics == []
    fresh = PolicyNet(env.layout.size, 5, tcfg.ppo.hidden, tcfg.ppo.init_std,
                      seed=tcfg.seed)
    for k in fresh.p:
        np.testing.assert_array_equal(net.p[k], fresh.p[k])
    final = PolicyNet.load(tmp_path / "z" / "ckpt_final.npz",
                           expect_layout_hash=env.layout.layout_hash)
    for k in fresh.p:
        np.testing.assert_array_equal(final.p[k], fresh.p[k])


def test_same_seed_training_metrics_bitwise_equal(small_world, tmp_path):
    cfg, rset, cache = small_world
    out = []
    for tag in ("a", "b"):
        tcfg = make_train_cfg(tmp_path / tag)
        env = BatchEnv(cfg, tcfg.num_envs, rset, {0: cache}, seed=tcfg.seed,
                       pin_level=0)
        train(tcfg, env)
        out.append((tmp_path / tag / "metrics.csv").read_bytes())
    assert out[0] == out[1]


def test_metrics_file_roundtrip(small_world, tmp_path):
    cfg, rset, cache = small_world
    tcfg = make_train_cfg(tmp_path / "m", iterations=1)
    env = BatchEnv(cfg, tcfg.num_envs, rset, {0: cache}, seed=tcfg.seed,
                   pin_level=0)
    _, metrics = train(tcfg, env)
    rows = read_metrics(tmp_path / "m" / "metrics.csv")
    assert len(rows) == len(metrics) == 1
    for k, v in metrics[0].items():
        got = rows[0][k]
        if isinstance(v, float) and np.isnan(v):
            assert np.isnan(got)
        else:
            assert got == v, k


def test_collect_rollout_shapes_and_bootstrap(small_world):
    cfg, rset, cache = small_world
    env = BatchEnv(cfg, 4, rset, {0: cache}, seed=11, pin_level=0)
    net = PolicyNet(env.layout.size, 5, (8,), 0.4, seed=47)
    obs = env.reset_all()
    rng = np.random.default_rng(12)
    rollout, nxt, n_eps = collect_rollout(env, net, obs, 6, rng)
    assert rollout["obs"].shape == (6, 4, env.layout.size)
    assert rollout["actions"].shape == (6, 4, 5)
    assert rollout["rewards"].shape == (6, 4)
    assert rollout["dones"].shape == (6, 4)
    assert rollout["bootstrap"].shape == (4,)
    np.testing.assert_array_equal(rollout["bootstrap"], net.value(nxt))
    assert n_eps == int(rollout["dones"].sum())
