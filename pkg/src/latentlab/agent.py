"""Replay buffer and the entropy-seeking actor-critic learner.

Critic: clipped double Q against EMA targets, one-step returns, intrinsic
rewards relabeled from current representations at every update. Encoder
weights receive gradients from the critic only; the actor sees detached
representations. Rewards are computed on detached representations too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import explore
from . import numcore as nc
from .nets import actor_sample


class NumericalError(RuntimeError):
    """NaN/Inf detected during training; carries the offending batch."""

    def __init__(self, msg, dump=None):
        super().__init__(msg)
        self.dump = dump or {}


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    batch: int = 1024
    seed_frames: int = 4000
    update_every: int = 2
    target_ema: float = 0.01
    stddev: float = 0.2
    stddev_clip: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        for f in ("lr", "batch", "seed_frames", "update_every", "target_ema",
                  "stddev", "stddev_clip"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    prompt: int
    t: int
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    prompt: np.ndarray
    t: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring over flat float32 observations."""

    def __init__(self, capacity, obs_dim, action_dim):
        self.capacity = int(capacity)
        self.obs = np.empty((self.capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.empty((self.capacity, obs_dim), dtype=np.float32)
        self.action = np.empty((self.capacity, action_dim), dtype=np.float32)
        self.prompt = np.empty(self.capacity, dtype=np.int64)
        self.t = np.empty(self.capacity, dtype=np.int64)
        self.done = np.empty(self.capacity, dtype=bool)
        self._head = 0
        self.size = 0

    def push(self, tr: Transition):
        i = self._head
        self.obs[i] = np.asarray(tr.obs, dtype=np.float32).ravel()
        self.next_obs[i] = np.asarray(tr.next_obs, dtype=np.float32).ravel()
        self.action[i] = tr.action
        self.prompt[i] = tr.prompt
        self.t[i] = tr.t
        self.done[i] = tr.done
        self._head = (self._head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self):
        return self.size

    def get(self, j):
        """j-th transition in FIFO order (0 = oldest retained)."""
        if not 0 <= j < self.size:
            raise IndexError(j)
        i = (self._head - self.size + j) % self.capacity
        return Transition(
            self.obs[i].copy(), self.action[i].copy(), self.next_obs[i].copy(),
            int(self.prompt[i]), int(self.t[i]), bool(self.done[i]),
        )

    def sample(self, batch, rng) -> Batch:
        """Uniform without replacement within the batch."""
        if batch > self.size:
            raise ValueError(f"batch {batch} > buffer size {self.size}")
        idx = rng.choice(self.size, size=batch, replace=False)
        idx = (self._head - self.size + idx) % self.capacity
        return Batch(
            self.obs[idx], self.action[idx], self.next_obs[idx],
            self.prompt[idx], self.t[idx], self.done[idx],
        )


def td_target(rewards, dones, q1_next, q2_next, gamma):
    """y = r + gamma * (1 - done) * min(Q1', Q2')."""
    mins = np.minimum(np.asarray(q1_next).ravel(), np.asarray(q2_next).ravel())
    mask = 1.0 - np.asarray(dones, dtype=np.float32)
    return (np.asarray(rewards, dtype=np.float32) + gamma * mask * mins).astype(np.float32)


class ExplorerAgent:
    """Owns the encoder trunk (critic-gradient only), actor/critic nets, and
    their optimizers."""

    def __init__(self, encoder, ac, cfg: AgentConfig, knn_cfg, rng,
                 encoder_rl_grads=True):
        self.encoder = encoder
        self.ac = ac
        self.cfg = cfg
        self.knn_cfg = knn_cfg
        self.encoder_rl_grads = encoder_rl_grads
        self._noise_rng = rng.child(0)
        self._target_noise_rng = rng.child(1)
        critic_params = ac.critic1.params + ac.critic2.params
        if encoder_rl_grads:
            critic_params = encoder.params + critic_params
        self.critic_opt = nc.Adam(critic_params, lr=cfg.lr)
        self.actor_opt = nc.Adam(ac.actor.params, lr=cfg.lr)
        self._h_cache = None

    def act(self, obs, eval_mode=False):
        h = self.encoder.encode(obs[None])
        a = actor_sample(
            self.ac.actor, h, 0.0 if eval_mode else self.cfg.stddev,
            self.cfg.stddev_clip, self._noise_rng,
        )
        return a[0]

    def encode_batch(self, obs, train=True):
        with nc.no_grad():
            return self.encoder.forward(obs, train=train).data

    def critic_update(self, batch: Batch, rewards, h_next=None):
        """Clipped-double-Q regression; gradients reach the encoder here only."""
        cfg = self.cfg
        if h_next is None:
            h_next = self.encode_batch(batch.next_obs, train=True)
        with nc.no_grad():
            a_next = actor_sample(
                self.ac.actor, h_next, cfg.stddev, cfg.stddev_clip, self._target_noise_rng
            )
            q1n = self.ac.target1.forward(nc.Tensor(h_next), nc.Tensor(a_next), train=False).data
            q2n = self.ac.target2.forward(nc.Tensor(h_next), nc.Tensor(a_next), train=False).data
        y = nc.Tensor(td_target(rewards, batch.done, q1n, q2n, cfg.gamma)[:, None])
        if self.encoder_rl_grads:
            h = self.encoder.forward(batch.obs, train=True)
            self._h_cache = h.data.copy()  # pre-step encoding, reused by actor_update
        else:
            # representation-detached mode: the critic reads frozen features
            self._h_cache = self.encode_batch(batch.obs, train=True)
            h = nc.Tensor(self._h_cache)
        a = nc.Tensor(batch.action)
        q1 = self.ac.critic1.forward(h, a, train=True)
        q2 = self.ac.critic2.forward(h, a, train=True)
        loss = nc.add(nc.mse(q1, y), nc.mse(q2, y))
        self.critic_opt.zero_grad()
        loss.backward()
        self.critic_opt.step()
        return float(loss.data)

    def actor_update(self, batch: Batch, h_det=None):
        """Maximize min(Q1, Q2) at pi(h); the encoder sees no gradient."""
        cfg = self.cfg
        if h_det is None:
            h_det = self.encode_batch(batch.obs, train=True)
        h = nc.Tensor(h_det)  # constant input: the stop-gradient boundary
        mean = self.ac.actor.mean(h, train=True)
        noise = np.clip(
            self._noise_rng.normal(mean.shape) * cfg.stddev, -cfg.stddev_clip, cfg.stddev_clip
        )
        a = nc.tanh(nc.add(mean, nc.Tensor(noise)))
        q = nc.minimum(
            self.ac.critic1.forward(h, a, train=True),
            self.ac.critic2.forward(h, a, train=True),
        )
        loss = nc.neg(nc.tmean(q))
        self.actor_opt.zero_grad()
        loss.backward()
        self.actor_opt.step()
        return float(loss.data)

    def update(self, batch: Batch):
        """One full learner cycle; rewards are relabeled from the current encoder."""
        h_next = self.encode_batch(batch.next_obs, train=True)
        rewards = explore.batch_rewards(h_next, self.knn_cfg).astype(np.float32)
        critic_loss = self.critic_update(batch, rewards, h_next=h_next)
        actor_loss = self.actor_update(batch, h_det=self._h_cache)
        self.ac.update_targets(self.cfg.target_ema)
        if not (np.isfinite(critic_loss) and np.isfinite(actor_loss)):
            raise NumericalError(
                f"non-finite loss (critic={critic_loss}, actor={actor_loss})",
                dump={"obs": batch.obs, "next_obs": batch.next_obs,
                      "action": batch.action, "rewards": rewards},
            )
        return {
            "intrinsic_reward_mean": float(rewards.mean()),
            "critic_loss": critic_loss,
            "actor_loss": actor_loss,
            # the entropy diagnostic is exactly the sum of per-particle rewards
            "entropy_estimate": float(rewards.sum()),
        }


class MetricsWriter:
    """JSONL metrics stream with a fixed key order."""

    KEYS = ("step", "intrinsic_reward_mean", "critic_loss", "actor_loss",
            "entropy_estimate", "buffer_size", "repr_loss")

    def __init__(self, path):
        self._f = open(path, "w")

    def write(self, row):
        self._f.write(json.dumps({k: row.get(k) for k in self.KEYS}) + "\n")
        self._f.flush()

    def close(self):
        self._f.close()


def train_loop(env, agent: ExplorerAgent, buffer: ReplayBuffer, cfg: AgentConfig,
               total_steps, rng, repr_learner=None, repr_batch=None,
               interleave_every=1, metrics_writer=None, metrics_every=500,
               checkpoint_fn=None, checkpoint_every=0, action_source="policy",
               dump_writer=None):
    """Interleaved rollout + learning.

    One env step per iteration; every ``update_every`` steps past the warmup
    one agent update runs, and every ``interleave_every``-th agent update is
    followed by one representation update on independently sampled pairs.
    ``action_source``: "policy" (default), "random_normal" (the random-action
    baseline: a ~ N(0, I) clipped to (-1, 1)), or "uniform".
    """
    sample_rng = rng.child(10)
    warmup_rng = rng.child(11)
    pair_rng = rng.child(12)
    n = env.spec.latent_dim
    state, obs = env.reset()
    if dump_writer is not None:
        dump_writer.write(state.episode, 0, state.c, state.z, None, obs)
    last = {"intrinsic_reward_mean": None, "critic_loss": None, "actor_loss": None,
            "entropy_estimate": None, "repr_loss": None}
    updates = 0
    from .simsiam import sample_pairs  # local import avoids a module cycle

    for step in range(1, total_steps + 1):
        if step <= cfg.seed_frames or action_source == "uniform":
            a = warmup_rng.uniform(-1.0, 1.0, (n,))
        elif action_source == "random_normal":
            a = np.clip(warmup_rng.normal((n,)), -0.999999, 0.999999)
        else:
            a = agent.act(obs).astype(np.float32)
        next_state, next_obs, done = env.step(state, a)
        buffer.push(Transition(obs.ravel(), a, next_obs.ravel(), state.c, state.t, done))
        if dump_writer is not None:
            dump_writer.write(next_state.episode, next_state.t, next_state.c,
                              next_state.z, a, next_obs)
        state, obs = (next_state, next_obs)
        if done:
            state, obs = env.reset()
            if dump_writer is not None:
                dump_writer.write(state.episode, 0, state.c, state.z, None, obs)

        if step > cfg.seed_frames and step % cfg.update_every == 0 and buffer.size >= cfg.batch:
            batch = buffer.sample(cfg.batch, sample_rng)
            last.update(agent.update(batch))
            updates += 1
            if repr_learner is not None and interleave_every > 0 and updates % interleave_every == 0:
                pairs = sample_pairs(buffer, repr_batch or cfg.batch, pair_rng)
                last["repr_loss"] = repr_learner.step(pairs)

        if metrics_writer is not None and step % metrics_every == 0:
            metrics_writer.write({"step": step, "buffer_size": buffer.size, **last})
        if checkpoint_fn is not None and checkpoint_every and step % checkpoint_every == 0:
            checkpoint_fn(step)

    if checkpoint_fn is not None:
        checkpoint_fn(total_steps)
    return {"steps": total_steps, "updates": updates, **last}
