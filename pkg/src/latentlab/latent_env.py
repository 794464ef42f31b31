"""The interactive MDP in latent space.

Per step: draw a fresh standard-normal latent, mix it with the (scaled)
action, then fold the mixture into an exponential moving average for
temporal persistency; decode the EMA latent with the frozen generator.
The per-episode prompt is drawn once at reset. There is no extrinsic
reward; rewards are computed downstream from representations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .numcore import Rng

_STREAM_ENV = 17


@dataclass
class EnvConfig:
    alpha: float = 0.5
    beta: float = 0.95
    episode_length: int = 200
    action_scale: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")


@dataclass
class EnvState:
    z: np.ndarray
    c: int
    t: int
    rng: Rng
    episode: int


def combine(z, a, alpha, action_scale=1.0):
    """Mix a fresh latent with a (scaled) action: alpha*(s*a) + (1-alpha)*z."""
    z = np.asarray(z, dtype=np.float32)
    a = np.asarray(a, dtype=np.float32)
    if z.shape != a.shape:
        raise ValueError(f"latent/action dimension mismatch: {z.shape} vs {a.shape}")
    return np.float32(alpha) * (np.float32(action_scale) * a) + np.float32(1.0 - alpha) * z


def ema(z_prev, z_new, beta, t=1):
    """Temporal persistency: beta*z_prev + (1-beta)*z_new (t=0 passes z_new)."""
    if t == 0:
        return np.asarray(z_new, dtype=np.float32)
    return np.float32(beta) * np.asarray(z_prev, dtype=np.float32) + np.float32(
        1.0 - beta
    ) * np.asarray(z_new, dtype=np.float32)


class LatentEnv:
    """Episodic environment over a frozen generator."""

    def __init__(self, gen, cfg: EnvConfig, seed=0):
        self.gen = gen
        self.cfg = cfg
        self.spec = gen.spec()
        self._base = Rng(seed, _STREAM_ENV)
        self._episodes = 0

    def reset(self, seed=None):
        """Sample prompt and initial latent; returns (state, observation)."""
        if seed is None:
            seed = int(self._base.integers(0, 2**62))
        rng = Rng(seed, _STREAM_ENV + 1)
        c = int(rng.integers(0, self.spec.num_classes))
        z0 = rng.normal((self.spec.latent_dim,))
        obs = self.gen.generate(z0, c)
        state = EnvState(z=z0, c=c, t=0, rng=rng, episode=self._episodes)
        self._episodes += 1
        return state, obs

    def step(self, state: EnvState, a):
        """Advance one step; returns (state, observation, done)."""
        if state.t >= self.cfg.episode_length:
            raise RuntimeError(f"step after episode end (t={state.t})")
        a = np.asarray(a, dtype=np.float32)
        if a.shape != (self.spec.latent_dim,):
            raise ValueError(
                f"action shape {a.shape} != latent shape ({self.spec.latent_dim},)"
            )
        z_fresh = state.rng.normal((self.spec.latent_dim,))
        z_mix = combine(z_fresh, a, self.cfg.alpha, self.cfg.action_scale)
        z_next = ema(state.z, z_mix, self.cfg.beta, t=state.t + 1)
        obs = self.gen.generate(z_next, state.c)
        next_state = EnvState(
            z=z_next, c=state.c, t=state.t + 1, rng=state.rng, episode=state.episode
        )
        return next_state, obs, next_state.t == self.cfg.episode_length


def obs_digest(obs):
    """Stable 64-bit digest of an observation's raw f32 bytes (hex)."""
    raw = np.ascontiguousarray(obs, dtype="<f4").tobytes()
    return hashlib.blake2b(raw, digest_size=8).hexdigest()


class TrajectoryWriter:
    """JSONL rollout dump: one record per step; observations are regenerable
    from (z, c) through the same frozen generator, so no payload is stored
    by default."""

    def __init__(self, path):
        self._f = open(path, "w")

    def write(self, episode, t, c, z, a, obs):
        rec = {
            "episode": int(episode),
            "t": int(t),
            "c": int(c),
            "z": [float(v) for v in np.asarray(z)],
            "a": None if a is None else [float(v) for v in np.asarray(a)],
            "obs_digest": obs_digest(obs),
            "obs_path": None,
        }
        self._f.write(json.dumps(rec) + "\n")

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trajectory(path):
    """Yield trajectory records in recorded order."""
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)
