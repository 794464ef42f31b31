"""Frozen-representation evaluation: linear probe, nearest-neighbor coverage,
baseline runners, and the alpha/beta ablation grid.

Probe features are taken at the encoder output h (pre-projection). Coverage
for blob scenes is computed on raw flattened pixels; note that Euclidean
distance in a deep feature space would be the large-scale analog.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Rng


@dataclass
class LabeledFeatureSet:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError(
                f"{len(self.features)} feature rows vs {len(self.labels)} labels"
            )


@dataclass
class ProbeConfig:
    epochs: int = 100
    lr: float = 0.001
    batch: int = 512
    seed: int = 0


def linear_probe(train: LabeledFeatureSet, test: LabeledFeatureSet,
                 cfg: ProbeConfig | None = None):
    """Train a single linear layer with softmax cross-entropy on frozen
    features; returns top-1 test accuracy."""
    cfg = cfg or ProbeConfig()
    classes = int(train.labels.max()) + 1
    if len(np.unique(train.labels)) < 2:
        raise ValueError("degenerate probe input: fewer than two classes")
    if train.features.shape[1] != test.features.shape[1]:
        raise ValueError("train/test feature dimensions differ")
    d = train.features.shape[1]
    rng = Rng(cfg.seed, stream=23)
    w = nc.ParamBlock("probe/w", np.zeros((d, classes), dtype=np.float32))
    b = nc.ParamBlock("probe/b", np.zeros(classes, dtype=np.float32))
    opt = nc.Adam([w, b], lr=cfg.lr)
    x = train.features.astype(np.float32)
    y = train.labels
    n = len(x)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for i in range(0, n, cfg.batch):
            idx = order[i : i + cfg.batch]
            logits = nc.add(nc.matmul(nc.Tensor(x[idx]), w), b)
            loss = nc.cross_entropy(logits, y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    with nc.no_grad():
        logits = test.features.astype(np.float32) @ w.data + b.data
    return float((logits.argmax(axis=1) == test.labels).mean())


def coverage(gen_features, ref_features):
    """Percent of generated rows whose nearest reference row is unique.

    For each generated row find its Euclidean nearest reference row;
    coverage = |unique matched reference indices| / |generated| * 100.
    """
    gen = np.asarray(gen_features, dtype=np.float64)
    ref = np.asarray(ref_features, dtype=np.float64)
    if gen.ndim != 2 or ref.ndim != 2 or gen.shape[1] != ref.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {gen.shape} vs {ref.shape}"
        )
    if not len(gen) or not len(ref):
        raise ValueError("both feature sets must be nonempty")
    ref_sq = (ref * ref).sum(axis=1)
    matched = np.empty(len(gen), dtype=np.int64)
    chunk = max(1, 2**22 // max(1, len(ref)))
    for i in range(0, len(gen), chunk):
        g = gen[i : i + chunk]
        d2 = (g * g).sum(axis=1)[:, None] + ref_sq[None, :] - 2.0 * (g @ ref.T)
        matched[i : i + len(g)] = d2.argmin(axis=1)
    return 100.0 * len(np.unique(matched)) / len(gen)


def encode_features(encoder, obs, batch=512):
    """Eval-mode encoder features for a stack of flat observations."""
    out = []
    for i in range(0, len(obs), batch):
        out.append(encoder.encode(obs[i : i + batch]))
    return np.concatenate(out, axis=0)


def make_probe_dataset(gen, n_train, n_test, seed):
    """Labeled observations from the generator prior: z ~ N(0, I), c uniform."""
    rng = Rng(seed, stream=29)
    spec = gen.spec()
    total = n_train + n_test
    zs = rng.normal((total, spec.latent_dim))
    cs = rng.integers(0, spec.num_classes, (total,))
    obs = gen.generate_batch(zs, cs).reshape(total, -1)
    return (
        LabeledFeatureSet(obs[:n_train], cs[:n_train]),
        LabeledFeatureSet(obs[n_train:], cs[n_train:]),
    )


def probe_encoder(encoder, gen, n_train, n_test, probe_cfg, data_seed):
    """Generate a labeled dataset, embed it with the frozen encoder, probe it."""
    train_obs, test_obs = make_probe_dataset(gen, n_train, n_test, data_seed)
    train = LabeledFeatureSet(encode_features(encoder, train_obs.features), train_obs.labels)
    test = LabeledFeatureSet(encode_features(encoder, test_obs.features), test_obs.labels)
    return linear_probe(train, test, probe_cfg)


@dataclass
class AblationGrid:
    alphas: list
    betas: list
    seeds: list

    def cells(self):
        for a in self.alphas:
            for b in self.betas:
                for s in self.seeds:
                    yield (float(a), float(b), int(s))


BASELINE_KINDS = ("random_action", "passive_ordered", "passive_random", "static_pairs")


def run_baseline(kind, run_cfg, out_dir, seeds, dump_path=None):
    """Train the identical representation learner on a baseline data source
    and return its probe accuracies (one per seed). See runner.baseline_run."""
    from . import runner  # deferred: runner composes this module

    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}; expected {BASELINE_KINDS}")
    accs = []
    for s in seeds:
        accs.append(runner.baseline_run(kind, run_cfg, out_dir, seed=s, dump_path=dump_path))
    return accs


def ablation_grid(grid: AblationGrid, run_cfg, out_dir, resume=True):
    """One pretrain+probe per (alpha, beta, seed) cell; writes CSV plus a
    manifest so an interrupted grid resumes past completed cells."""
    from . import runner

    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "grid_manifest.json")
    done = {}
    if resume and os.path.exists(manifest_path):
        with open(manifest_path) as f:
            done = {tuple(json.loads(k)): v for k, v in json.load(f).items()}
    rows = []
    for cell in grid.cells():
        if cell in done:
            rows.append((*cell, done[cell]))
            continue
        acc = runner.grid_cell_run(run_cfg, out_dir, alpha=cell[0], beta=cell[1], seed=cell[2])
        rows.append((*cell, acc))
        done[cell] = acc
        with open(manifest_path, "w") as f:
            json.dump({json.dumps(list(k)): v for k, v in done.items()}, f)
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["alpha", "beta", "seed", "accuracy"])
        writer.writerows(rows)
    return csv_path, rows
