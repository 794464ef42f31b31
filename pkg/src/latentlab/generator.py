"""Frozen decoders G: (latent, prompt) -> observation.

Three built-ins cover the testing spectrum: ``identity_debug`` is an exact
oracle, ``frozen_random_mlp`` a seeded smooth manifold, ``blob_renderer`` a
class-conditioned 16x16 RGB scene with probe-able semantics. All are pure
functions of (z, c) after construction; external decoders attach through
the bridge client instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Rng


@dataclass(frozen=True)
class GeneratorSpec:
    latent_dim: int
    num_classes: int
    obs_shape: tuple
    value_range: tuple

    def __post_init__(self):
        if self.latent_dim < 1 or self.num_classes < 1:
            raise ValueError("latent_dim and num_classes must be >= 1")


@dataclass(frozen=True)
class Prompt:
    """Per-episode conditioning label; fixed for the whole episode."""

    class_id: int


class GeneratorBase:
    def spec(self) -> GeneratorSpec:
        raise NotImplementedError

    def generate(self, z, c):
        z = np.asarray(z, dtype=np.float32)
        s = self.spec()
        if z.shape != (s.latent_dim,):
            raise ValueError(f"latent shape {z.shape} != ({s.latent_dim},)")
        if not 0 <= int(c) < s.num_classes:
            raise ValueError(f"prompt {c} outside [0, {s.num_classes})")
        return self.generate_batch(z[None, :], np.array([int(c)]))[0]

    def generate_batch(self, zs, cs):
        raise NotImplementedError

    def obs_dim(self):
        return int(np.prod(self.spec().obs_shape))


class IdentityDebug(GeneratorBase):
    """Exactness oracle: observation = latent concatenated with one-hot prompt.

    Latents pass through unclipped, so the declared value range is wide
    enough for standard-normal draws rather than the image default [-1, 1].
    """

    def __init__(self, latent_dim=2, num_classes=3):
        self._spec = GeneratorSpec(latent_dim, num_classes,
                                   (latent_dim + num_classes,), (-8.0, 8.0))

    def spec(self):
        return self._spec

    def generate_batch(self, zs, cs):
        zs = np.asarray(zs, dtype=np.float32)
        onehot = np.zeros((len(cs), self._spec.num_classes), dtype=np.float32)
        onehot[np.arange(len(cs)), np.asarray(cs, dtype=int)] = 1.0
        return np.concatenate([zs, onehot], axis=1)


class FrozenRandomMlp(GeneratorBase):
    """Seeded random 3-layer tanh decoder; a stand-in smooth latent manifold."""

    def __init__(self, latent_dim=8, num_classes=4, obs_dim=32, hidden=64, seed=0):
        self._spec = GeneratorSpec(latent_dim, num_classes, (obs_dim,), (-1.0, 1.0))
        rng = Rng(seed, stream=91)
        sizes = [latent_dim + num_classes, hidden, hidden, obs_dim]
        self._weights = []
        for i in range(3):
            w = rng.normal((sizes[i], sizes[i + 1])) / np.sqrt(sizes[i], dtype=np.float32)
            b = 0.1 * rng.normal((sizes[i + 1],))
            self._weights.append((w, b))

    def spec(self):
        return self._spec

    def generate_batch(self, zs, cs):
        zs = np.asarray(zs, dtype=np.float32)
        onehot = np.zeros((len(cs), self._spec.num_classes), dtype=np.float32)
        onehot[np.arange(len(cs)), np.asarray(cs, dtype=int)] = 1.0
        x = np.concatenate([zs, onehot], axis=1)
        for w, b in self._weights:
            x = np.tanh(x @ w + b)
        return x


class BlobRenderer(GeneratorBase):
    """Class-conditioned 16x16 RGB scenes, closed form in (z, c).

    Scene formula (pixel grid x, y in 0..15, gx = (x - 7.5)/7.5, gy likewise):

      center   cy = clip(8 + 4*z0, 3, 13),  cx = clip(8 + 4*z1, 3, 13)
      radius   r  = clip(3.5 + 1.1*z2, 3.0, 5.0),  core radius ri = 0.78*r
      hue(t)   = (cos t, cos(t - 2pi/3), cos(t + 2pi/3))
      ring hue = 4pi*z3 ; core hue = 2pi*c/K ; core strength s = clip(0.35 + 0.55*|z4|, 0, 1)
      bg       = 0.45*(sin(2pi*z5)*gx + sin(2pi*z6)*gy + sin(2pi*z7)*gx*gy) per channel
      d        = sqrt((y - cy)^2 + (x - cx)^2)
      m = clip(r - d, 0, 1) ; mi = clip(ri - d, 0, 1)
      pixel    = clip(bg*(1 - m) + m*((1 - mi)*hue(ring) + mi*s*hue(core)), -1, 1)

    The latent drives position/size/ring-hue/background; ring hue and
    background are deliberately high-frequency in z so they flicker under
    small latent drift, while the prompt-colored core is the one factor
    that persists through a whole episode.
    """

    def __init__(self, latent_dim=16, num_classes=8, size=16):
        if latent_dim < 8:
            raise ValueError("blob_renderer needs latent_dim >= 8")
        self._spec = GeneratorSpec(latent_dim, num_classes, (size, size, 3), (-1.0, 1.0))
        self.size = size
        ax = np.arange(size, dtype=np.float32)
        self._yy = ax[:, None]
        self._xx = ax[None, :]
        g = (ax - (size - 1) / 2.0) / ((size - 1) / 2.0)
        self._gy = g[:, None] * np.ones((1, size), dtype=np.float32)
        self._gx = np.ones((size, 1), dtype=np.float32) * g[None, :]

    def spec(self):
        return self._spec

    @staticmethod
    def _hue(theta):
        third = 2.0 * np.pi / 3.0
        return np.stack(
            [np.cos(theta), np.cos(theta - third), np.cos(theta + third)], axis=-1
        ).astype(np.float32)

    def generate_batch(self, zs, cs):
        zs = np.asarray(zs, dtype=np.float32)
        cs = np.asarray(cs, dtype=int)
        cy = np.clip(8.0 + 4.0 * zs[:, 0], 3.0, 13.0)[:, None, None]
        cx = np.clip(8.0 + 4.0 * zs[:, 1], 3.0, 13.0)[:, None, None]
        r = np.clip(3.5 + 1.1 * zs[:, 2], 3.0, 5.0)[:, None, None]
        ri = 0.78 * r
        d = np.sqrt((self._yy[None] - cy) ** 2 + (self._xx[None] - cx) ** 2)
        m = np.clip(r - d, 0.0, 1.0)[..., None]
        mi = np.clip(ri - d, 0.0, 1.0)[..., None]
        ring = self._hue(4.0 * np.pi * zs[:, 3])[:, None, None, :]
        core = self._hue(2.0 * np.pi * cs / self._spec.num_classes)[:, None, None, :]
        s = np.clip(0.35 + 0.55 * np.abs(zs[:, 4]), 0.0, 1.0)[:, None, None, None]
        two_pi = 2.0 * np.pi
        bg = 0.45 * (
            np.sin(two_pi * zs[:, 5, None, None]) * self._gx[None]
            + np.sin(two_pi * zs[:, 6, None, None]) * self._gy[None]
            + np.sin(two_pi * zs[:, 7, None, None]) * (self._gx * self._gy)[None]
        )[..., None]
        img = bg * (1.0 - m) + m * ((1.0 - mi) * ring + mi * s * core)
        return np.clip(img, -1.0, 1.0).astype(np.float32)


_BUILTINS = {
    "identity_debug": IdentityDebug,
    "frozen_random_mlp": FrozenRandomMlp,
    "blob_renderer": BlobRenderer,
}


def make_generator(kind, **kwargs):
    """Construct a built-in decoder by name (bridge clients are built separately)."""
    if kind not in _BUILTINS:
        raise ValueError(f"unknown generator kind {kind!r}; builtins: {sorted(_BUILTINS)}")
    return _BUILTINS[kind](**kwargs)
