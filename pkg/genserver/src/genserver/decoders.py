"""Decoders the server can wrap.

``identity`` echoes the latent plus a one-hot class block (loopback
conformance target). ``mlp`` loads a frozen tanh multilayer perceptron from
an .npz file with arrays w0, b0, w1, b1, ... so any pretrained pickled
decoder exported to that layout can back the environment.
"""

from __future__ import annotations

import numpy as np


class IdentityDecoder:
    def __init__(self, latent_dim=2, num_classes=3):
        self.latent_dim = int(latent_dim)
        self.num_classes = int(num_classes)
        self.obs_shape = [self.latent_dim + self.num_classes]
        self.value_range = [-8.0, 8.0]

    def generate(self, z, c):
        onehot = np.zeros(self.num_classes, dtype=np.float32)
        onehot[c] = 1.0
        return np.concatenate([np.asarray(z, dtype=np.float32), onehot])


class MlpDecoder:
    """Frozen tanh MLP on concat(latent, one-hot class); output in [-1, 1]."""

    def __init__(self, path, num_classes, latent_dim=None):
        blob = np.load(path)
        self.layers = []
        i = 0
        while f"w{i}" in blob:
            self.layers.append((blob[f"w{i}"].astype(np.float32),
                                blob[f"b{i}"].astype(np.float32)))
            i += 1
        if not self.layers:
            raise ValueError(f"{path}: no w0/b0 arrays found")
        self.num_classes = int(num_classes)
        in_dim = self.layers[0][0].shape[0]
        self.latent_dim = int(latent_dim) if latent_dim else in_dim - self.num_classes
        if self.latent_dim + self.num_classes != in_dim:
            raise ValueError(
                f"{path}: first layer expects {in_dim} inputs, "
                f"got latent {self.latent_dim} + classes {self.num_classes}"
            )
        self.obs_shape = [int(self.layers[-1][0].shape[1])]
        self.value_range = [-1.0, 1.0]

    def generate(self, z, c):
        onehot = np.zeros(self.num_classes, dtype=np.float32)
        onehot[c] = 1.0
        x = np.concatenate([np.asarray(z, dtype=np.float32), onehot])
        for w, b in self.layers:
            x = np.tanh(x @ w + b)
        return x


def build_decoder(model, latent_dim=None, num_classes=None):
    """``model`` is 'identity' or a path to an .npz MLP."""
    if model == "identity":
        return IdentityDecoder(latent_dim or 2, num_classes or 3)
    return MlpDecoder(model, num_classes or 1, latent_dim)
