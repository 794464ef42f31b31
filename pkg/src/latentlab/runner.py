"""Composition root: build components from a RunConfig and execute runs.

Every run derives all randomness from the master seed (separate streams for
net init, environment, agent noise, and sampling), so a run is bitwise
reproducible from its config snapshot with built-in generators.
"""

from __future__ import annotations

import os

import numpy as np

from . import config as cfgmod
from . import evalkit, simsiam
from .agent import AgentConfig, ExplorerAgent, MetricsWriter, ReplayBuffer, train_loop
from .bridge import BridgeClient
from .explore import KnnConfig
from .generator import make_generator
from .latent_env import EnvConfig, LatentEnv, TrajectoryWriter
from .nets import ActorCritic, Encoder, SiameseHeads, collect_state, load_state
from .numcore import Rng, load_checkpoint, save_checkpoint


def build_generator(cfg: cfgmod.RunConfig):
    g = cfg.generator
    if g.kind == "bridge":
        client = BridgeClient(g.bridge_cmd)
        client.handshake()
        return client
    if g.kind == "identity_debug":
        return make_generator(g.kind, latent_dim=g.latent_dim, num_classes=g.num_classes)
    if g.kind == "frozen_random_mlp":
        return make_generator(g.kind, latent_dim=g.latent_dim, num_classes=g.num_classes,
                              obs_dim=g.obs_dim, seed=g.seed)
    return make_generator(g.kind, latent_dim=g.latent_dim, num_classes=g.num_classes)


def build_encoder(cfg: cfgmod.RunConfig, obs_shape, rng):
    n = cfg.nets
    return Encoder(
        obs_shape, n.repr_dim, rng, kind=n.encoder,
        mlp_hidden=tuple(n.mlp_hidden), conv_arch=tuple(tuple(l) for l in n.conv_arch),
        conv_fc_hidden=n.conv_fc_hidden,
    )


def encoder_arch_meta(cfg: cfgmod.RunConfig, obs_shape):
    n = cfg.nets
    return {
        "obs_shape": list(obs_shape),
        "repr_dim": n.repr_dim,
        "kind": n.encoder,
        "mlp_hidden": list(n.mlp_hidden),
        "conv_arch": [list(l) for l in n.conv_arch],
        "conv_fc_hidden": n.conv_fc_hidden,
    }


def encoder_from_checkpoint(path):
    arrays, meta = load_checkpoint(path)
    arch = meta.get("arch")
    if arch is None:
        raise ValueError(f"{path}: checkpoint lacks encoder arch metadata")
    enc = Encoder(
        tuple(arch["obs_shape"]), arch["repr_dim"], Rng(0, 5), kind=arch["kind"],
        mlp_hidden=tuple(arch["mlp_hidden"]),
        conv_arch=tuple(tuple(l) for l in arch["conv_arch"]),
        conv_fc_hidden=arch["conv_fc_hidden"],
    )
    load_state({"encoder": enc}, arrays)
    return enc


def planned_repr_updates(cfg: cfgmod.RunConfig):
    """Cosine-schedule horizon: interleaved updates plus the offline phase."""
    agent_updates = max(0, (cfg.total_steps - cfg.agent.seed_frames) // cfg.agent.update_every)
    inter = agent_updates // max(1, cfg.repr.interleave_every) if cfg.repr.interleave_every else 0
    filled = min(cfg.total_steps, cfg.agent.capacity)
    offline = cfg.repr.offline_epochs * max(1, filled // cfg.repr.batch)
    return inter + offline


class Components:
    def __init__(self, cfg: cfgmod.RunConfig):
        self.cfg = cfg
        self.gen = build_generator(cfg)
        spec = self.gen.spec()
        master = Rng(cfg.master_seed)
        self.env = LatentEnv(
            self.gen,
            EnvConfig(cfg.env.alpha, cfg.env.beta, cfg.env.episode_length,
                      cfg.env.action_scale),
            seed=cfg.master_seed,
        )
        init_rng = master.child(1)
        self.encoder = build_encoder(cfg, spec.obs_shape, init_rng.child(0))
        self.heads = SiameseHeads(cfg.nets.repr_dim, cfg.nets.proj_dim,
                                  cfg.nets.pred_hidden, init_rng.child(1))
        self.ac = ActorCritic(cfg.nets.repr_dim, spec.latent_dim, cfg.nets.hidden_dim,
                              init_rng.child(2), gaussian_head=cfg.nets.gaussian_head)
        self.agent_cfg = AgentConfig(
            gamma=cfg.agent.gamma, lr=cfg.agent.lr, batch=cfg.agent.batch,
            seed_frames=cfg.agent.seed_frames, update_every=cfg.agent.update_every,
            target_ema=cfg.agent.target_ema, stddev=cfg.agent.stddev,
            stddev_clip=cfg.agent.stddev_clip,
        )
        self.agent = ExplorerAgent(self.encoder, self.ac, self.agent_cfg,
                                   KnnConfig(), master.child(2),
                                   encoder_rl_grads=cfg.agent.encoder_rl_grads)
        self.buffer = ReplayBuffer(cfg.agent.capacity, self.gen.obs_dim(), spec.latent_dim)
        repr_cfg = simsiam.SimSiamConfig(
            base_lr=cfg.repr.base_lr, momentum=cfg.repr.momentum,
            weight_decay=cfg.repr.weight_decay, batch=cfg.repr.batch,
            interleave_every=cfg.repr.interleave_every,
            offline_epochs=cfg.repr.offline_epochs,
        )
        self.learner = simsiam.ReprLearner(self.encoder, self.heads, repr_cfg,
                                           planned_repr_updates(cfg))
        self.train_rng = master.child(3)

    def net_roles(self):
        return {
            "encoder": self.encoder,
            "projection": self.heads.projection,
            "predictor": self.heads.predictor,
            "actor": self.ac.actor,
            "critic1": self.ac.critic1,
            "critic2": self.ac.critic2,
            "target_critic1": self.ac.target1,
            "target_critic2": self.ac.target2,
        }

    def save(self, run_dir, obs_shape):
        arrays, roles = collect_state(self.net_roles())
        save_checkpoint(os.path.join(run_dir, "agent.ckpt"), arrays, {"roles": roles})
        enc_arrays, _ = collect_state({"encoder": self.encoder})
        save_checkpoint(
            os.path.join(run_dir, "encoder.ckpt"), enc_arrays,
            {"arch": encoder_arch_meta(self.cfg, obs_shape)},
        )


def pretrain(cfg: cfgmod.RunConfig, run_dir):
    """Full exploration + representation pretraining run into ``run_dir``."""
    os.makedirs(run_dir, exist_ok=True)
    cfgmod.snapshot(cfg, os.path.join(run_dir, "config.json"))
    comps = Components(cfg)
    spec = comps.gen.spec()
    metrics = MetricsWriter(os.path.join(run_dir, "metrics.jsonl"))
    dump = (TrajectoryWriter(os.path.join(run_dir, "trajectory.jsonl"))
            if cfg.dump_trajectory else None)

    def checkpoint_fn(step):
        comps.save(run_dir, spec.obs_shape)

    try:
        summary = train_loop(
            comps.env, comps.agent, comps.buffer, comps.agent_cfg, cfg.total_steps,
            comps.train_rng, repr_learner=comps.learner, repr_batch=cfg.repr.batch,
            interleave_every=cfg.repr.interleave_every, metrics_writer=metrics,
            metrics_every=cfg.metrics_every, checkpoint_fn=checkpoint_fn,
            checkpoint_every=cfg.checkpoint_every, action_source=cfg.agent.action_source,
            dump_writer=dump,
        )
        offline_losses = comps.learner.offline_phase(comps.buffer, comps.train_rng.child(20))
        if comps.buffer.size:
            stride = max(1, comps.buffer.size // cfg.eval.coverage_n)
            rows = np.arange(0, comps.buffer.size, stride)[: cfg.eval.coverage_n]
            phys = (comps.buffer._head - comps.buffer.size + rows) % comps.buffer.capacity
            np.save(os.path.join(run_dir, "coverage_set.npy"), comps.buffer.obs[phys])
        comps.save(run_dir, spec.obs_shape)
    finally:
        metrics.close()
        if dump is not None:
            dump.close()
    summary["repr_offline_updates"] = len(offline_losses)
    summary["run_dir"] = run_dir
    summary["encoder_ckpt"] = os.path.join(run_dir, "encoder.ckpt")
    return summary


def probe_checkpoint(encoder_ckpt, cfg: cfgmod.RunConfig):
    enc = encoder_from_checkpoint(encoder_ckpt)
    gen = build_generator(cfg)
    pc = evalkit.ProbeConfig(epochs=cfg.eval.probe_epochs, lr=cfg.eval.probe_lr,
                             batch=cfg.eval.probe_batch, seed=cfg.eval.data_seed)
    return evalkit.probe_encoder(enc, gen, cfg.eval.probe_train_n, cfg.eval.probe_test_n,
                                 pc, cfg.eval.data_seed)


def probe_components(encoder, cfg: cfgmod.RunConfig, gen=None):
    gen = gen or build_generator(cfg)
    pc = evalkit.ProbeConfig(epochs=cfg.eval.probe_epochs, lr=cfg.eval.probe_lr,
                             batch=cfg.eval.probe_batch, seed=cfg.eval.data_seed)
    return evalkit.probe_encoder(encoder, gen, cfg.eval.probe_train_n, cfg.eval.probe_test_n,
                                 pc, cfg.eval.data_seed)


def pretrain_and_probe(cfg: cfgmod.RunConfig, run_dir):
    summary = pretrain(cfg, run_dir)
    acc = probe_checkpoint(summary["encoder_ckpt"], cfg)
    summary["probe_accuracy"] = acc
    return summary


def grid_cell_run(cfg: cfgmod.RunConfig, out_dir, alpha, beta, seed):
    import copy

    cell = copy.deepcopy(cfg)
    cell.env.alpha = float(alpha)
    cell.env.beta = float(beta)
    cell.master_seed = int(seed)
    cell_dir = os.path.join(out_dir, f"cell_a{alpha}_b{beta}_s{seed}")
    return pretrain_and_probe(cell, cell_dir)["probe_accuracy"]


# --- baselines -----------------------------------------------------------------


def _fresh_repr_stack(cfg: cfgmod.RunConfig, obs_shape, seed, total_updates):
    rng = Rng(seed).child(1)
    enc = build_encoder(cfg, obs_shape, rng.child(0))
    heads = SiameseHeads(cfg.nets.repr_dim, cfg.nets.proj_dim, cfg.nets.pred_hidden,
                         rng.child(1))
    repr_cfg = simsiam.SimSiamConfig(
        base_lr=cfg.repr.base_lr, momentum=cfg.repr.momentum,
        weight_decay=cfg.repr.weight_decay, batch=cfg.repr.batch,
        interleave_every=cfg.repr.interleave_every, offline_epochs=cfg.repr.offline_epochs,
    )
    return enc, simsiam.ReprLearner(enc, heads, repr_cfg, total_updates)


def _pairs_from_dump(cfg: cfgmod.RunConfig, dump_path, gen):
    """Regenerate the recorded observation stream; pair consecutive records
    of the same episode."""
    from .latent_env import read_trajectory

    if not os.path.exists(dump_path):
        raise FileNotFoundError(f"missing trajectory dump: {dump_path}")
    zs, cs, eps = [], [], []
    for rec in read_trajectory(dump_path):
        zs.append(rec["z"])
        cs.append(rec["c"])
        eps.append(rec["episode"])
    zs = np.asarray(zs, dtype=np.float32)
    cs = np.asarray(cs, dtype=np.int64)
    eps = np.asarray(eps, dtype=np.int64)
    obs = gen.generate_batch(zs, cs).reshape(len(zs), -1)
    first = np.arange(len(zs) - 1)
    same = eps[first] == eps[first + 1]
    return obs, first[same]


def baseline_run(kind, cfg: cfgmod.RunConfig, out_dir, seed, dump_path=None):
    """Probe accuracy of one baseline arm at the budget implied by ``cfg``."""
    import copy

    os.makedirs(out_dir, exist_ok=True)
    if kind == "random_action":
        arm = copy.deepcopy(cfg)
        arm.agent.action_source = "random_normal"
        arm.master_seed = int(seed)
        return pretrain_and_probe(arm, os.path.join(out_dir, f"random_action_s{seed}"))[
            "probe_accuracy"
        ]

    gen = build_generator(cfg)
    total_updates = planned_repr_updates(cfg)
    enc, learner = _fresh_repr_stack(cfg, gen.spec().obs_shape, seed, total_updates)
    rng = Rng(seed).child(7)

    if kind in ("passive_ordered", "passive_random"):
        if dump_path is None:
            raise FileNotFoundError("passive baselines need a recorded trajectory dump")
        obs, starts = _pairs_from_dump(cfg, dump_path, gen)
        b = cfg.repr.batch
        if len(starts) < b:
            raise ValueError(f"dump provides {len(starts)} pairs < batch {b}")
        for u in range(total_updates):
            if kind == "passive_ordered":
                lo = (u * b) % (len(starts) - b + 1)
                idx = starts[lo : lo + b]
            else:
                idx = starts[rng.choice(len(starts), size=b, replace=False)]
            learner.step(simsiam.PairBatch(obs[idx], obs[idx + 1]))
    elif kind == "static_pairs":
        train, _ = evalkit.make_probe_dataset(gen, cfg.eval.probe_train_n,
                                              cfg.eval.probe_test_n, cfg.eval.data_seed)
        by_label = [np.nonzero(train.labels == c)[0] for c in range(int(train.labels.max()) + 1)]
        b = cfg.repr.batch
        for _ in range(total_updates):
            cs = rng.integers(0, len(by_label), (b,))
            i1 = np.array([by_label[c][rng.integers(0, len(by_label[c]))] for c in cs])
            i2 = np.array([by_label[c][rng.integers(0, len(by_label[c]))] for c in cs])
            learner.step(simsiam.PairBatch(train.features[i1], train.features[i2]))
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")

    return probe_components(enc, cfg, gen=gen)
