import numpy as np
import pytest

from latentlab import numcore as nc
from latentlab.agent import (AgentConfig, Batch, ExplorerAgent, NumericalError,
                             ReplayBuffer, Transition, td_target, train_loop)
from latentlab.explore import KnnConfig
from latentlab.generator import IdentityDebug
from latentlab.latent_env import EnvConfig, LatentEnv
from latentlab.nets import ActorCritic, Critic, Encoder
from latentlab.numcore import Rng


def tr(i, obs_dim=3, action_dim=2, done=False):
    return Transition(
        np.full(obs_dim, float(i), dtype=np.float32),
        np.full(action_dim, 0.1 * i, dtype=np.float32),
        np.full(obs_dim, float(i) + 0.5, dtype=np.float32),
        prompt=i % 4, t=i % 7, done=done,
    )


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(2, 3, 2)
    for i in range(3):
        buf.push(tr(i))
    assert len(buf) == 2
    assert buf.get(0).obs[0] == 1.0 and buf.get(1).obs[0] == 2.0


def test_buffer_roundtrip_bitwise():
    buf = ReplayBuffer(10, 3, 2)
    t0 = tr(5, done=True)
    buf.push(t0)
    got = buf.get(0)
    assert got.obs.tobytes() == t0.obs.tobytes()
    assert got.next_obs.tobytes() == t0.next_obs.tobytes()
    assert got.action.tobytes() == t0.action.tobytes()
    assert (got.prompt, got.t, got.done) == (t0.prompt, t0.t, t0.done)


def test_buffer_sampling_uniform_3sigma():
    buf = ReplayBuffer(100, 1, 1)
    for i in range(100):
        buf.push(Transition(np.array([float(i)]), np.zeros(1), np.zeros(1), 0, 0, False))
    rng = Rng(0, 50)
    counts = np.zeros(100)
    draws = 100_000
    per_batch = 5
    for _ in range(draws // per_batch):
        batch = buf.sample(per_batch, rng)
        for v in batch.obs[:, 0]:
            counts[int(v)] += 1
    expected = draws / 100
    sigma = np.sqrt(draws * (1 / 100) * (99 / 100))
    assert np.all(np.abs(counts - expected) < 3 * sigma + 1e-9), (
        f"max deviation {np.max(np.abs(counts - expected)):.1f} vs 3sigma {3*sigma:.1f}"
    )


def test_buffer_sample_too_large():
    buf = ReplayBuffer(10, 1, 1)
    buf.push(tr(0, 1, 1))
    with pytest.raises(ValueError):
        buf.sample(2, Rng(0, 0))


# --- TD target ---------------------------------------------------------------------


def test_td_target_gamma_zero():
    y = td_target(np.array([1.5]), np.array([False]), np.array([7.0]), np.array([9.0]), 0.0)
    assert y[0] == pytest.approx(1.5)


def test_td_target_done_masks_bootstrap():
    y = td_target(np.array([1.5]), np.array([True]), np.array([7.0]), np.array([9.0]), 0.99)
    assert y[0] == pytest.approx(1.5)


def test_td_target_clipped_double_q():
    # stub target critics return constants 2 and 1: y = 0.5 + 0.99 * 1 = 1.49
    y = td_target(np.array([0.5]), np.array([False]), np.array([2.0]), np.array([1.0]), 0.99)
    assert y[0] == pytest.approx(1.49)


# --- learner updates ------------------------------------------------------------------


def make_agent(obs_dim=6, n=3, repr_dim=5, seed=0, lr=1e-4):
    enc = Encoder((obs_dim,), repr_dim, Rng(seed, 2), kind="mlp", mlp_hidden=(16,))
    ac = ActorCritic(repr_dim, n, 16, Rng(seed, 3))
    cfg = AgentConfig(lr=lr, batch=16, seed_frames=8, stddev=0.2, stddev_clip=0.3)
    return ExplorerAgent(enc, ac, cfg, KnnConfig(k=3), Rng(seed, 4))


def rand_batch(obs_dim=6, n=3, b=16, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(
        obs=rng.standard_normal((b, obs_dim)).astype(np.float32),
        action=rng.uniform(-0.9, 0.9, (b, n)).astype(np.float32),
        next_obs=rng.standard_normal((b, obs_dim)).astype(np.float32),
        prompt=np.zeros(b, dtype=np.int64),
        t=np.zeros(b, dtype=np.int64),
        done=np.zeros(b, dtype=bool),
    )


def test_critic_update_reaches_encoder():
    agent = make_agent()
    batch = rand_batch()
    rewards = np.ones(16, dtype=np.float32)
    before = [p.data.copy() for p in agent.encoder.params]
    agent.critic_update(batch, rewards)
    moved = any(not np.array_equal(b, p.data) for b, p in zip(before, agent.encoder.params))
    assert moved, "critic gradients must update the shared encoder"


def test_actor_update_leaves_encoder_untouched():
    agent = make_agent()
    batch = rand_batch()
    for p in agent.encoder.params:
        p.zero_grad()
    before = [p.data.copy() for p in agent.encoder.params]
    agent.actor_update(batch)
    for b, p in zip(before, agent.encoder.params):
        np.testing.assert_array_equal(b, p.data)
        assert np.all(p.grad == 0.0), "actor loss must not reach the encoder"


class QuadraticBowlCritic:
    """Stub critic with Q(h, a) = -|a|^2; optimal action is the zero vector."""

    params = ()

    def forward(self, h, a, train=True):
        return nc.neg(nc.tsum(nc.mul(a, a), axis=1, keepdims=True))


def test_actor_converges_on_quadratic_bowl():
    agent = make_agent(lr=5e-3)
    agent.ac.critic1 = QuadraticBowlCritic()
    agent.ac.critic2 = QuadraticBowlCritic()
    agent.cfg = AgentConfig(lr=5e-3, batch=16, seed_frames=8, stddev=1e-6, stddev_clip=1e-5)
    batch = rand_batch()
    h = agent.encode_batch(batch.obs, train=False)
    for _ in range(1500):
        agent.actor_update(batch, h_det=h)
    with nc.no_grad():
        mean = agent.ac.actor.mean(nc.Tensor(h), train=False).data
    assert float(np.abs(np.tanh(mean)).mean()) < 0.05


def test_actor_loss_decreases_with_frozen_critics():
    agent = make_agent(seed=3)
    batch = rand_batch(seed=3)
    h = agent.encode_batch(batch.obs, train=False)
    first = agent.actor_update(batch, h_det=h)
    losses = [agent.actor_update(batch, h_det=h) for _ in range(100)]
    assert losses[-1] < first


def test_update_cycle_metrics_and_targets():
    agent = make_agent(seed=5)
    t1_before = [p.data.copy() for p in agent.ac.target1.params]
    out = agent.update(rand_batch(seed=5))
    assert set(out) >= {"intrinsic_reward_mean", "critic_loss", "actor_loss", "entropy_estimate"}
    assert np.isfinite(out["critic_loss"])
    moved = any(not np.array_equal(b, p.data) for b, p in zip(t1_before, agent.ac.target1.params))
    assert moved, "EMA target update must run in the cycle"
    # optimizers never touch target nets directly
    opt_params = set(map(id, agent.critic_opt.params + agent.actor_opt.params))
    for p in agent.ac.target1.params + agent.ac.target2.params:
        assert id(p) not in opt_params


def test_nan_watchdog_raises():
    agent = make_agent(seed=6)
    agent.encoder.params[0].data[:] = np.nan
    with pytest.raises(NumericalError) as e:
        agent.update(rand_batch(seed=6))
    assert "obs" in e.value.dump


# --- train loop ----------------------------------------------------------------------


def make_env(n=3, classes=2, seed=0):
    return LatentEnv(IdentityDebug(n, classes), EnvConfig(0.5, 0.9, 25), seed=seed)


def run_loop(total_steps, seed=0, action_source="policy", buffer=None):
    env = make_env(seed=seed)
    agent = make_agent(obs_dim=5, n=3, seed=seed)
    buf = buffer or ReplayBuffer(500, 5, 3)
    summary = train_loop(env, agent, buf, agent.cfg, total_steps, Rng(seed, 8),
                         action_source=action_source)
    return summary, buf


def test_warmup_blocks_updates():
    summary, _ = run_loop(8)
    assert summary["updates"] == 0


def test_updates_start_after_seed_frames():
    summary, _ = run_loop(60)
    # gated on both the warmup and a full batch being available
    want = sum(1 for s in range(1, 61) if s > 8 and s % 2 == 0 and s >= 16)
    assert summary["updates"] == want


def test_no_future_leakage():
    # every sampled index refers to an already-pushed transition
    env = make_env(seed=1)
    agent = make_agent(obs_dim=5, n=3, seed=1)
    buf = ReplayBuffer(500, 5, 3)
    pushed = 0
    orig_push, orig_sample = buf.push, buf.sample

    def counting_push(t):
        nonlocal pushed
        pushed += 1
        orig_push(t)

    def checked_sample(b, rng):
        assert buf.size <= pushed
        return orig_sample(b, rng)

    buf.push, buf.sample = counting_push, checked_sample
    train_loop(env, agent, buf, agent.cfg, 60, Rng(1, 8))
    assert pushed == 60


def test_random_normal_action_source_runs():
    summary, buf = run_loop(40, action_source="random_normal")
    acts = np.stack([buf.get(i).action for i in range(len(buf))])
    assert np.all(acts > -1.0) and np.all(acts < 1.0)
    assert summary["updates"] > 0
