import math

import numpy as np
import pytest

from latentlab import generator as gen
from latentlab.numcore import Rng


def test_identity_debug_example():
    g = gen.IdentityDebug(latent_dim=2, num_classes=3)
    obs = g.generate(np.array([0.1, -0.2], dtype=np.float32), 1)
    np.testing.assert_allclose(obs, [0.1, -0.2, 0.0, 1.0, 0.0], atol=1e-7)


def test_identity_debug_spec():
    g = gen.IdentityDebug(latent_dim=2, num_classes=3)
    assert g.spec().obs_shape == (5,)
    assert g.spec().latent_dim == 2


def test_blob_renderer_spec_defaults():
    g = gen.BlobRenderer()
    s = g.spec()
    assert s.latent_dim == 16 and s.num_classes == 8 and s.obs_shape == (16, 16, 3)
    assert s.value_range == (-1.0, 1.0)


def test_generate_dim_mismatch_errors():
    g = gen.IdentityDebug(2, 3)
    with pytest.raises(ValueError, match="latent shape"):
        g.generate(np.zeros(3, dtype=np.float32), 0)
    with pytest.raises(ValueError, match="prompt"):
        g.generate(np.zeros(2, dtype=np.float32), 3)


def test_frozen_random_mlp_bitwise_deterministic():
    g = gen.FrozenRandomMlp(latent_dim=4, num_classes=2, seed=11)
    z = Rng(0, 1).normal((4,))
    a = g.generate(z, 1)
    b = g.generate(z, 1)
    assert a.tobytes() == b.tobytes()
    g2 = gen.FrozenRandomMlp(latent_dim=4, num_classes=2, seed=11)
    assert g2.generate(z, 1).tobytes() == a.tobytes()


def test_frozen_random_mlp_range():
    g = gen.FrozenRandomMlp(latent_dim=4, num_classes=2, seed=0)
    rng = Rng(1, 1)
    obs = g.generate_batch(rng.normal((100, 4)), rng.integers(0, 2, (100,)))
    assert np.all(obs >= -1.0) and np.all(obs <= 1.0)


def test_frozen_random_mlp_lipschitz_probe():
    # smoothness: measured slope ratio over 1000 probes is finite and recorded
    g = gen.FrozenRandomMlp(latent_dim=6, num_classes=3, seed=5)
    rng = Rng(2, 1)
    z = rng.normal((1000, 6))
    delta = 1e-3 * rng.normal((1000, 6))
    c = rng.integers(0, 3, (1000,))
    d_obs = np.linalg.norm(
        g.generate_batch(z + delta, c).astype(np.float64)
        - g.generate_batch(z, c).astype(np.float64), axis=1)
    d_z = np.linalg.norm(delta.astype(np.float64), axis=1)
    ratios = d_obs / d_z
    lip = float(ratios.max())
    assert math.isfinite(lip)


def reference_blob(z, c, num_classes=8, size=16):
    """Independent per-pixel raster of the documented scene formula."""
    cy = min(max(8.0 + 4.0 * z[0], 3.0), 13.0)
    cx = min(max(8.0 + 4.0 * z[1], 3.0), 13.0)
    r = min(max(3.5 + 1.1 * z[2], 3.0), 5.0)
    ri = 0.78 * r
    third = 2.0 * math.pi / 3.0

    def hue(t):
        return (math.cos(t), math.cos(t - third), math.cos(t + third))

    ring = hue(4.0 * math.pi * z[3])
    core = hue(2.0 * math.pi * c / num_classes)
    s = min(max(0.35 + 0.55 * abs(z[4]), 0.0), 1.0)
    img = np.zeros((size, size, 3), dtype=np.float64)
    for y in range(size):
        for x in range(size):
            gx = (x - (size - 1) / 2.0) / ((size - 1) / 2.0)
            gy = (y - (size - 1) / 2.0) / ((size - 1) / 2.0)
            bg = 0.45 * (math.sin(2 * math.pi * z[5]) * gx
                         + math.sin(2 * math.pi * z[6]) * gy
                         + math.sin(2 * math.pi * z[7]) * gx * gy)
            d = math.sqrt((y - cy) ** 2 + (x - cx) ** 2)
            m = min(max(r - d, 0.0), 1.0)
            mi = min(max(ri - d, 0.0), 1.0)
            for ch in range(3):
                v = bg * (1 - m) + m * ((1 - mi) * ring[ch] + mi * s * core[ch])
                img[y, x, ch] = min(max(v, -1.0), 1.0)
    return img


def test_blob_matches_independent_raster():
    g = gen.BlobRenderer()
    rng = Rng(3, 1)
    for c in (0, 3, 7):
        z = rng.normal((16,))
        got = g.generate(z, c)
        want = reference_blob(z.astype(np.float64), c)
        np.testing.assert_allclose(got, want, atol=1e-5)


def test_blob_purity_and_determinism():
    g = gen.BlobRenderer()
    z = Rng(4, 1).normal((16,))
    assert g.generate(z, 2).tobytes() == g.generate(z, 2).tobytes()


def test_blob_prompt_sensitivity():
    # fixed latent, different prompts: at least 5% of pixels differ
    g = gen.BlobRenderer()
    rng = Rng(5, 1)
    for _ in range(20):
        z = rng.normal((16,))
        base = g.generate(z, 0)
        for c in range(1, 8):
            other = g.generate(z, c)
            differing = np.any(np.abs(base - other) > 1e-6, axis=2).sum()
            assert differing >= 0.05 * 256, f"c={c}: only {differing} pixels differ"


def test_blob_value_range():
    g = gen.BlobRenderer()
    rng = Rng(6, 1)
    obs = g.generate_batch(3.0 * rng.normal((50, 16)), rng.integers(0, 8, (50,)))
    assert np.all(obs >= -1.0) and np.all(obs <= 1.0)


def test_make_generator_unknown_kind():
    with pytest.raises(ValueError, match="unknown generator kind"):
        gen.make_generator("stylegan")
