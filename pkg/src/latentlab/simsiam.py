"""Temporal-pair siamese representation learning.

Consecutive observations of one episode are the two views; the loss is the
symmetrized negative cosine similarity between one branch's prediction and
the other branch's stop-gradient projection. No data augmentation anywhere:
pairs go through byte-identical (an optional hook exists, off by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import cosine_lr


@dataclass
class SimSiamConfig:
    base_lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch: int = 512
    interleave_every: int = 1   # repr updates per agent update during exploration
    offline_epochs: int = 0     # extra epochs over the final buffer after the run

    def __post_init__(self):
        for f in ("base_lr", "momentum", "weight_decay", "batch"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")


@dataclass
class PairBatch:
    """Consecutive same-episode observation pairs (s1[i], s2[i])."""

    s1: np.ndarray
    s2: np.ndarray


def neg_cosine(p, z):
    """Mean over rows of -cos(p, z); zero rows contribute 0 by convention."""
    return nc.neg(nc.tmean(nc.cosine_similarity(p, z, axis=1)))


def symmetric_loss(f, g, q, s1, s2, train=True):
    """0.5*D(q(g(f(s1))), sg(g(f(s2)))) + 0.5*D(q(g(f(s2))), sg(g(f(s1))))."""
    h1 = f.forward(s1, train)
    h2 = f.forward(s2, train)
    z1 = g.forward(h1, train)
    z2 = g.forward(h2, train)
    p1 = q.forward(z1, train)
    p2 = q.forward(z2, train)
    d1 = neg_cosine(p1, nc.stop_gradient(z2))
    d2 = neg_cosine(p2, nc.stop_gradient(z1))
    return nc.mul(nc.add(d1, d2), nc.Tensor(np.float32(0.5)))


def sample_pairs(buffer, batch_size, rng) -> PairBatch:
    """Uniformly sampled (obs, next_obs) pairs; every stored transition is an
    adjacent same-episode pair by construction, so none straddles a boundary."""
    if buffer.size < batch_size:
        raise ValueError(f"need {batch_size} transitions, buffer has {buffer.size}")
    batch = buffer.sample(batch_size, rng)
    return PairBatch(batch.obs, batch.next_obs)


class ReprLearner:
    """SGD + cosine schedule over the encoder f and heads g, q."""

    def __init__(self, encoder, heads, cfg: SimSiamConfig, total_updates, augment=None):
        self.encoder = encoder
        self.heads = heads
        self.cfg = cfg
        self.total_updates = max(1, int(total_updates))
        self.updates_done = 0
        self.augment = augment  # disabled by default; acceptance runs keep it None
        self.opt = nc.Sgd(
            encoder.params + heads.params,
            momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        )

    def loss(self, pairs: PairBatch, train=True):
        s1, s2 = pairs.s1, pairs.s2
        if self.augment is not None:
            s1, s2 = self.augment(s1), self.augment(s2)
        return symmetric_loss(
            self.encoder, self.heads.projection, self.heads.predictor, s1, s2, train
        )

    def current_lr(self):
        return cosine_lr(
            min(self.updates_done, self.total_updates), self.total_updates, self.cfg.base_lr
        )

    def step(self, pairs: PairBatch):
        """One SGD step on the symmetrized loss.

        Both views go through the encoder/heads as one fused batch; the
        stop-gradient targets are the swapped halves of the projection
        output, so the mean equals 0.5*D(p1, sg z2) + 0.5*D(p2, sg z1).
        """
        lr = self.current_lr()
        s1, s2 = pairs.s1, pairs.s2
        if self.augment is not None:
            s1, s2 = self.augment(s1), self.augment(s2)
        n = len(s1)
        both = np.concatenate(
            [np.asarray(s1).reshape(n, -1), np.asarray(s2).reshape(n, -1)], axis=0
        )
        h = self.encoder.forward(both, train=True)
        z = self.heads.projection.forward(h, train=True)
        p = self.heads.predictor.forward(z, train=True)
        swapped = np.concatenate([z.data[n:], z.data[:n]], axis=0)
        loss = neg_cosine(p, nc.Tensor(swapped))
        self.opt.zero_grad()
        loss.backward()
        self.opt.step(lr)
        self.updates_done += 1
        return float(loss.data)

    def offline_phase(self, buffer, rng, epochs=None, batch=None):
        """Extra pass over the final buffer (the 'train on stored experience' mode)."""
        epochs = self.cfg.offline_epochs if epochs is None else epochs
        batch = batch or self.cfg.batch
        losses = []
        if epochs <= 0:
            return losses
        per_epoch = max(1, buffer.size // batch)
        for _ in range(epochs):
            for _ in range(per_epoch):
                losses.append(self.step(sample_pairs(buffer, batch, rng)))
        return losses


def feature_std(encoder, obs, batch=512):
    """Per-feature std of encoder outputs (collapse monitor)."""
    feats = []
    for i in range(0, len(obs), batch):
        feats.append(encoder.encode(obs[i : i + batch]))
    return np.concatenate(feats).std(axis=0)
