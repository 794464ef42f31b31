"""Network blocks: encoder, siamese projection/predictor heads, tanh actor,
clipped-double critics with EMA target copies.

All blocks are plain ParamBlock containers; forward passes build autodiff
graphs. He-uniform init for ReLU layers, Xavier-uniform for tanh/linear
output layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc

ACTIVATIONS = ("relu", "tanh", "none")


@dataclass
class MlpSpec:
    """Layer widths with per-layer activation and batch-norm flags."""

    layer_sizes: list[int]
    activation: list[str] = field(default_factory=list)
    batch_norm: list[bool] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.layer_sizes)
        if n < 1:
            raise ValueError("MlpSpec needs at least one layer")
        if not self.activation:
            self.activation = ["relu"] * (n - 1) + ["none"]
        if not self.batch_norm:
            self.batch_norm = [False] * n
        if len(self.activation) != n or len(self.batch_norm) != n:
            raise ValueError("per-layer lists must match layer_sizes")
        for a in self.activation:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")


def _he_uniform(rng, fan_in, shape, dtype):
    lim = math.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, shape, dtype=dtype)


def _xavier_uniform(rng, fan_in, fan_out, shape, dtype):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape, dtype=dtype)


class Linear:
    def __init__(self, name, in_dim, out_dim, rng, activation="relu", dtype=np.float32):
        if activation == "relu":
            w = _he_uniform(rng, in_dim, (in_dim, out_dim), dtype)
        else:
            w = _xavier_uniform(rng, in_dim, out_dim, (in_dim, out_dim), dtype)
        self.w = nc.ParamBlock(f"{name}/w", w)
        self.b = nc.ParamBlock(f"{name}/b", np.zeros(out_dim, dtype=dtype))

    def forward(self, x):
        return nc.add(nc.matmul(x, self.w), self.b)

    @property
    def params(self):
        return [self.w, self.b]


class BatchNorm1d:
    def __init__(self, name, dim, dtype=np.float32, momentum=0.1):
        self.gamma = nc.ParamBlock(f"{name}/gamma", np.ones(dim, dtype=dtype))
        self.beta = nc.ParamBlock(f"{name}/beta", np.zeros(dim, dtype=dtype))
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self._name = name

    def forward(self, x, train):
        return nc.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            train=train, momentum=self.momentum,
        )

    @property
    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self._name}/running_mean": self.running_mean,
                f"{self._name}/running_var": self.running_var}

    def load_buffers(self, arrays):
        self.running_mean[:] = arrays[f"{self._name}/running_mean"]
        self.running_var[:] = arrays[f"{self._name}/running_var"]


class Mlp:
    """Stack of Linear (+ optional BatchNorm) (+ activation) layers."""

    def __init__(self, name, input_dim, spec: MlpSpec, rng, dtype=np.float32):
        self.name = name
        self.spec = spec
        self.layers = []
        self.bns = []
        d = input_dim
        for i, (width, act, bn) in enumerate(
            zip(spec.layer_sizes, spec.activation, spec.batch_norm)
        ):
            self.layers.append(Linear(f"{name}/l{i}", d, width, rng, activation=act, dtype=dtype))
            self.bns.append(BatchNorm1d(f"{name}/bn{i}", width, dtype=dtype) if bn else None)
            d = width
        self.output_dim = d

    def forward(self, x, train=True):
        for lin, bn, act in zip(self.layers, self.bns, self.spec.activation):
            x = lin.forward(x)
            if bn is not None:
                x = bn.forward(x, train)
            if act == "relu":
                x = nc.relu(x)
            elif act == "tanh":
                x = nc.tanh(x)
        return x

    @property
    def params(self):
        out = []
        for lin, bn in zip(self.layers, self.bns):
            out.extend(lin.params)
            if bn is not None:
                out.extend(bn.params)
        return out

    def buffers(self):
        out = {}
        for bn in self.bns:
            if bn is not None:
                out.update(bn.buffers())
        return out

    def load_buffers(self, arrays):
        for bn in self.bns:
            if bn is not None:
                bn.load_buffers(arrays)


class ConvEncoder:
    """A small conv stack plus a 2-layer MLP head (image observations).

    ``conv_arch`` is a list of (kernel, stride, channels) triples; the
    default two stride-2 3x3 layers suit 16x16-ish inputs.
    """

    def __init__(self, name, obs_shape, conv_arch, fc_hidden, out_dim, rng, dtype=np.float32):
        h, w, cin = obs_shape
        self.name = name
        self.obs_shape = tuple(obs_shape)
        self.conv_arch = [tuple(layer) for layer in conv_arch]
        self.convs = []
        d = cin
        for i, (k, s, cout) in enumerate(self.conv_arch):
            wk = _he_uniform(rng, k * k * d, (k, k, d, cout), dtype)
            self.convs.append(
                (nc.ParamBlock(f"{name}/c{i}/w", wk),
                 nc.ParamBlock(f"{name}/c{i}/b", np.zeros(cout, dtype=dtype)))
            )
            d = cout
            h = (h - k) // s + 1
            w = (w - k) // s + 1
            if h < 1 or w < 1:
                raise ValueError(f"conv_arch collapses the {obs_shape} input at layer {i}")
        self.flat_dim = h * w * d
        self.head = Mlp(
            f"{name}/head", self.flat_dim,
            MlpSpec([fc_hidden, out_dim], ["relu", "none"], [True, False]),
            rng, dtype=dtype,
        )
        self.output_dim = out_dim

    def forward(self, x, train=True):
        b = x.shape[0]
        x = nc.reshape(x, (b,) + self.obs_shape)
        for (k, s, _), (wk, bk) in zip(self.conv_arch, self.convs):
            x = nc.relu(nc.conv2d(x, wk, bk, stride=s, pad=0))
        x = nc.reshape(x, (b, self.flat_dim))
        return self.head.forward(x, train)

    @property
    def params(self):
        out = []
        for wk, bk in self.convs:
            out.extend([wk, bk])
        return out + self.head.params

    def buffers(self):
        return self.head.buffers()

    def load_buffers(self, arrays):
        self.head.load_buffers(arrays)


class Encoder:
    """Observation encoder f: flat observation batch -> representation batch."""

    def __init__(self, obs_shape, out_dim, rng, kind="auto", mlp_hidden=(128,),
                 conv_arch=((3, 2, 8), (3, 2, 16)), conv_fc_hidden=128, dtype=np.float32):
        self.obs_shape = tuple(obs_shape)
        self.obs_dim = int(np.prod(obs_shape))
        if kind == "auto":
            kind = "conv" if len(self.obs_shape) == 3 else "mlp"
        self.kind = kind
        if kind == "conv":
            self.trunk = ConvEncoder("encoder", self.obs_shape, conv_arch,
                                     conv_fc_hidden, out_dim, rng, dtype=dtype)
        else:
            sizes = list(mlp_hidden) + [out_dim]
            acts = ["relu"] * len(mlp_hidden) + ["none"]
            bns = [True] * len(mlp_hidden) + [False]
            self.trunk = Mlp("encoder", self.obs_dim, MlpSpec(sizes, acts, bns), rng, dtype=dtype)
        self.output_dim = out_dim

    def forward(self, x, train=True):
        if not isinstance(x, nc.Tensor):
            arr = np.asarray(x)
            if arr.size % self.obs_dim:
                raise nc.ShapeMismatch("encode", arr.shape, (-1, self.obs_dim))
            x = nc.Tensor(arr.reshape(-1, self.obs_dim))
        if x.shape[1] != self.obs_dim:
            raise nc.ShapeMismatch("encode", x.shape, (-1, self.obs_dim))
        return self.trunk.forward(x, train)

    def encode(self, obs, train=False):
        """No-grad convenience: numpy observations in, numpy representations out."""
        with nc.no_grad():
            out = self.forward(obs, train=train)
        return out.data

    @property
    def params(self):
        return self.trunk.params

    def buffers(self):
        return self.trunk.buffers()

    def load_buffers(self, arrays):
        self.trunk.load_buffers(arrays)


class SiameseHeads:
    """Projection g (3 layers, BN everywhere incl. output, no final ReLU) and
    bottleneck predictor q (2 layers, BN on hidden only)."""

    def __init__(self, in_dim, proj_dim, pred_hidden, rng, dtype=np.float32):
        if pred_hidden >= proj_dim:
            raise ValueError(
                f"predictor hidden {pred_hidden} must be < its output {proj_dim} (bottleneck)"
            )
        self.projection = Mlp(
            "projection", in_dim,
            MlpSpec([proj_dim, proj_dim, proj_dim],
                    ["relu", "relu", "none"],
                    [True, True, True]),
            rng, dtype=dtype,
        )
        self.predictor = Mlp(
            "predictor", proj_dim,
            MlpSpec([pred_hidden, proj_dim], ["relu", "none"], [True, False]),
            rng, dtype=dtype,
        )

    def project(self, h, train=True):
        return self.projection.forward(h, train)

    def predict(self, z, train=True):
        return self.predictor.forward(z, train)

    @property
    def params(self):
        return self.projection.params + self.predictor.params

    def buffers(self):
        return {**self.projection.buffers(), **self.predictor.buffers()}

    def load_buffers(self, arrays):
        self.projection.load_buffers(arrays)
        self.predictor.load_buffers(arrays)


class Actor:
    """3-layer MLP mapping representation -> pre-squash action mean.

    With ``gaussian_head`` a state-independent learned log-std is added;
    the default follows the fixed exploration-stddev schedule instead.
    """

    def __init__(self, repr_dim, action_dim, hidden, rng, gaussian_head=False, dtype=np.float32):
        self.net = Mlp(
            "actor", repr_dim,
            MlpSpec([hidden, hidden, action_dim], ["relu", "relu", "none"]),
            rng, dtype=dtype,
        )
        self.action_dim = action_dim
        self.log_std = (
            nc.ParamBlock("actor/log_std", np.full(action_dim, math.log(0.2), dtype=dtype))
            if gaussian_head else None
        )

    def mean(self, h, train=True):
        return self.net.forward(h, train)

    @property
    def params(self):
        ps = self.net.params
        return ps + [self.log_std] if self.log_std is not None else ps

    def buffers(self):
        return self.net.buffers()

    def load_buffers(self, arrays):
        self.net.load_buffers(arrays)


class Critic:
    """3-layer MLP on concat(representation, action) -> scalar value."""

    def __init__(self, name, repr_dim, action_dim, hidden, rng, dtype=np.float32):
        self.net = Mlp(
            name, repr_dim + action_dim,
            MlpSpec([hidden, hidden, 1], ["relu", "relu", "none"]),
            rng, dtype=dtype,
        )

    def forward(self, h, a, train=True):
        return self.net.forward(nc.concat([h, a], axis=1), train)

    @property
    def params(self):
        return self.net.params

    def buffers(self):
        return self.net.buffers()

    def load_buffers(self, arrays):
        self.net.load_buffers(arrays)


def target_ema_update(target_params, online_params, rate):
    """target <- (1 - rate) * target + rate * online, in place."""
    if len(target_params) != len(online_params):
        raise ValueError(
            f"param set mismatch: {len(target_params)} target vs {len(online_params)} online"
        )
    for t, o in zip(target_params, online_params):
        if t.shape != o.shape:
            raise nc.ShapeMismatch(f"target_ema_update {t.name}/{o.name}", t.shape, o.shape)
        t.data *= 1.0 - rate
        t.data += rate * o.data


def actor_sample(actor, h, stddev, clip, rng):
    """a = tanh(mean + clamp(eps * stddev, -clip, clip)), numpy fast path."""
    if stddev < 0:
        raise ValueError(f"stddev must be >= 0, got {stddev}")
    with nc.no_grad():
        mean = actor.mean(nc.Tensor(np.atleast_2d(h)), train=False).data
    noise = np.clip(rng.normal(mean.shape) * stddev, -clip, clip)
    # f32 tanh saturates to exactly 1.0; keep actions strictly interior
    lim = np.float32(1.0 - 1e-6)
    return np.clip(np.tanh(mean + noise), -lim, lim)


class ActorCritic:
    """Actor, two online critics, and their EMA target copies."""

    def __init__(self, repr_dim, action_dim, hidden, rng, gaussian_head=False, dtype=np.float32):
        self.actor = Actor(repr_dim, action_dim, hidden, rng.child(0), gaussian_head, dtype)
        self.critic1 = Critic("critic1", repr_dim, action_dim, hidden, rng.child(1), dtype)
        self.critic2 = Critic("critic2", repr_dim, action_dim, hidden, rng.child(2), dtype)
        self.target1 = Critic("target_critic1", repr_dim, action_dim, hidden, rng.child(1), dtype)
        self.target2 = Critic("target_critic2", repr_dim, action_dim, hidden, rng.child(2), dtype)
        self.sync_targets()
        for p in self.target1.params + self.target2.params:
            p.requires_grad = False

    def sync_targets(self):
        target_ema_update(self.target1.params, self.critic1.params, 1.0)
        target_ema_update(self.target2.params, self.critic2.params, 1.0)

    def update_targets(self, rate):
        target_ema_update(self.target1.params, self.critic1.params, rate)
        target_ema_update(self.target2.params, self.critic2.params, rate)

    @property
    def params(self):
        return (self.actor.params + self.critic1.params + self.critic2.params
                + self.target1.params + self.target2.params)


def collect_state(nets):
    """Flatten named modules into {name: array} for checkpointing."""
    arrays = {}
    roles = {}
    for role, net in nets.items():
        names = []
        for p in net.params:
            arrays[p.name] = p.data
            names.append(p.name)
        for k, v in net.buffers().items():
            arrays[k] = v
            names.append(k)
        roles[role] = names
    return arrays, roles


def load_state(nets, arrays):
    for net in nets.values():
        for p in net.params:
            if p.name not in arrays:
                raise KeyError(f"checkpoint missing parameter {p.name}")
            if tuple(arrays[p.name].shape) != p.shape:
                raise nc.ShapeMismatch(f"load {p.name}", arrays[p.name].shape, p.shape)
            p.data = arrays[p.name].astype(p.dtype, copy=True)
        net.load_buffers({k: v for k, v in arrays.items()})
