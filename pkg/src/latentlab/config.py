"""Run configuration: JSON-loaded, schema-checked, profile-defaulted.

Unknown keys are rejected so a stale config fails loudly. The two profiles:
``paper`` mirrors the published hyperparameters; ``desk`` shrinks capacity,
batch, warmup, and network widths to laptop scale.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class GeneratorSection:
    kind: str = "blob_renderer"
    latent_dim: int = 16
    num_classes: int = 8
    obs_dim: int = 32          # frozen_random_mlp only
    seed: int = 0              # frozen_random_mlp weights
    bridge_cmd: list = field(default_factory=list)


@dataclass
class EnvSection:
    alpha: float = 0.5
    beta: float = 0.95
    episode_length: int = 200
    action_scale: float = 1.0


@dataclass
class AgentSection:
    gamma: float = 0.99
    lr: float = 0.0001
    batch: int = 1024
    seed_frames: int = 4000
    update_every: int = 2
    target_ema: float = 0.01
    stddev: float = 0.2
    stddev_clip: float = 0.3
    capacity: int = 1_000_000
    action_source: str = "policy"
    encoder_rl_grads: bool = True


@dataclass
class NetsSection:
    encoder: str = "auto"       # auto | conv | mlp
    repr_dim: int = 64
    hidden_dim: int = 1024      # actor/critic hidden
    conv_arch: list = field(default_factory=lambda: [[3, 2, 8], [3, 2, 16]])
    conv_fc_hidden: int = 128
    mlp_hidden: list = field(default_factory=lambda: [128])
    proj_dim: int = 2048
    pred_hidden: int = 512
    gaussian_head: bool = False


@dataclass
class ReprSection:
    base_lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch: int = 512
    interleave_every: int = 1
    offline_epochs: int = 0


@dataclass
class EvalSection:
    probe_epochs: int = 100
    probe_lr: float = 0.001
    probe_batch: int = 512
    probe_train_n: int = 4096
    probe_test_n: int = 1024
    coverage_n: int = 2048
    data_seed: int = 1234


@dataclass
class RunConfig:
    profile: str = "desk"
    master_seed: int = 0
    total_steps: int = 200_000
    metrics_every: int = 500
    checkpoint_every: int = 0
    dump_trajectory: bool = False
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    env: EnvSection = field(default_factory=EnvSection)
    agent: AgentSection = field(default_factory=AgentSection)
    nets: NetsSection = field(default_factory=NetsSection)
    repr: ReprSection = field(default_factory=ReprSection)
    eval: EvalSection = field(default_factory=EvalSection)


# profile -> section -> overrides applied before user keys
PROFILES = {
    "paper": {},
    "desk": {
        "env": {"action_scale": 2.0},
        "agent": {"batch": 256, "seed_frames": 1000, "capacity": 100_000},
        "nets": {"hidden_dim": 128, "proj_dim": 128, "pred_hidden": 32,
                 "conv_arch": [[4, 4, 24], [2, 2, 48]]},
        "repr": {"batch": 256, "offline_epochs": 1},
    },
}

_SECTIONS = {
    "generator": GeneratorSection,
    "env": EnvSection,
    "agent": AgentSection,
    "nets": NetsSection,
    "repr": ReprSection,
    "eval": EvalSection,
}


def _build_section(cls, overrides, path):
    allowed = {f for f in cls.__dataclass_fields__}
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {path}: {sorted(unknown)}")
    try:
        return cls(**overrides)
    except TypeError as e:
        raise ConfigError(f"bad {path} section: {e}") from e


def from_dict(raw):
    """Build a validated RunConfig from plain dicts (profile applied first)."""
    raw = copy.deepcopy(raw)
    profile = raw.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected {sorted(PROFILES)}")
    top_allowed = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        merged = dict(PROFILES[profile].get(name, {}))
        user = raw.pop(name, {})
        if not isinstance(user, dict):
            raise ConfigError(f"section {name!r} must be an object")
        merged.update(user)
        sections[name] = _build_section(cls, merged, name)
    cfg = RunConfig(**{**raw, **sections})
    validate(cfg)
    return cfg


def load(path):
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return from_dict(raw)


def validate(cfg: RunConfig):
    if not 0.0 <= cfg.env.alpha <= 1.0 or not 0.0 <= cfg.env.beta <= 1.0:
        raise ConfigError("env.alpha and env.beta must lie in [0, 1]")
    if cfg.total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if cfg.agent.action_source not in ("policy", "random_normal", "uniform"):
        raise ConfigError(f"bad agent.action_source {cfg.agent.action_source!r}")
    if cfg.generator.kind not in (
        "blob_renderer", "identity_debug", "frozen_random_mlp", "bridge",
    ):
        raise ConfigError(f"unknown generator.kind {cfg.generator.kind!r}")
    if cfg.generator.kind == "bridge" and not cfg.generator.bridge_cmd:
        raise ConfigError("generator.kind 'bridge' needs generator.bridge_cmd")
    if cfg.nets.pred_hidden >= cfg.nets.proj_dim:
        raise ConfigError("nets.pred_hidden must be < nets.proj_dim (bottleneck)")


def snapshot(cfg: RunConfig, path):
    with open(path, "w") as f:
        json.dump(asdict(cfg), f, indent=2, sort_keys=True)


def load_snapshot(path):
    """Reload a run-directory snapshot (full field dump, no profile merging)."""
    with open(path) as f:
        raw = json.load(f)
    sections = {name: _build_section(cls, raw.pop(name, {}), name)
                for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**{**raw, **sections})
    validate(cfg)
    return cfg
