"""Nonparametric particle-entropy objective and intrinsic rewards.

Novelty of a representation is measured by distance to its k nearest
neighbors among a particle set (here: the minibatch's representations,
recomputed from the current encoder at every update and detached — no
gradient flows from rewards into the encoder).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TRANSFORMS = ("log1p", "log")


@dataclass
class KnnConfig:
    k: int = 12
    avg_top_k: bool = True
    transform: str = "log1p"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")


def _apply_transform(stat, transform):
    if transform == "log1p":
        return np.log1p(stat)
    return np.log(stat)


def knn_distances(query, particles, k):
    """The k smallest Euclidean distances from query to the particle set,
    ascending. If the query is itself a member (first exact row match), that
    copy is excluded."""
    particles = np.asarray(particles, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    m = particles.shape[0]
    if k >= m:
        raise ValueError(f"k={k} must be < number of particles m={m}")
    diff = particles - query[None, :]
    d2 = (diff * diff).sum(axis=1)
    member = np.nonzero(d2 == 0.0)[0]
    if member.size and np.array_equal(particles[member[0]], query):
        d2 = np.delete(d2, member[0])
    d = np.sqrt(np.sort(d2)[:k])
    return d


def _distance_stat(sorted_k_dists, cfg: KnnConfig):
    return sorted_k_dists.mean() if cfg.avg_top_k else sorted_k_dists[-1]


def intrinsic_reward(h, particles, cfg: KnnConfig):
    """Novelty reward of one representation against a particle set."""
    d = knn_distances(h, particles, cfg.k)
    return float(_apply_transform(_distance_stat(d, cfg), cfg.transform))


def entropy_estimate(particles, k, cfg: KnnConfig | None = None):
    """Diagnostic sum of per-particle transformed k-NN distance statistics."""
    particles = np.asarray(particles, dtype=np.float64)
    m = particles.shape[0]
    if m <= k:
        raise ValueError(f"need more particles than k: m={m}, k={k}")
    cfg = cfg or KnnConfig(k=k)
    stats = _batch_knn_stats(particles, k, cfg.avg_top_k)
    return float(_apply_transform(stats, cfg.transform).sum())


def _batch_knn_stats(h, k, avg_top_k):
    """Per-row k-NN distance statistic within a set, self excluded."""
    h64 = np.asarray(h, dtype=np.float64)
    sq = (h64 * h64).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (h64 @ h64.T)
    np.fill_diagonal(d2, np.inf)
    np.maximum(d2, 0.0, out=d2)
    m = h64.shape[0]
    part = np.partition(d2, k - 1, axis=1)[:, :k]
    d = np.sqrt(np.sort(part, axis=1))
    return d.mean(axis=1) if avg_top_k else d[:, -1]


def batch_rewards(batch_reps, cfg: KnnConfig):
    """Intrinsic reward for every row of a batch against the rest of the batch.

    Permutation-equivariant; exact (no approximate neighbor search)."""
    h = np.asarray(batch_reps)
    if h.shape[0] < cfg.k + 1:
        raise ValueError(f"batch of {h.shape[0]} too small for k={cfg.k}")
    stats = _batch_knn_stats(h, cfg.k, cfg.avg_top_k)
    return _apply_transform(stats, cfg.transform)


def brute_force_rewards(batch_reps, cfg: KnnConfig):
    """O(m^2) scalar-loop oracle for batch_rewards (kept deliberately naive)."""
    rows = [list(map(float, r)) for r in np.asarray(batch_reps)]
    out = []
    for i, a in enumerate(rows):
        dists = []
        for j, b in enumerate(rows):
            if i == j:
                continue
            dists.append(math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))))
        dists.sort()
        top = dists[: cfg.k]
        stat = sum(top) / len(top) if cfg.avg_top_k else top[-1]
        out.append(math.log1p(stat) if cfg.transform == "log1p" else math.log(stat))
    return np.array(out)
