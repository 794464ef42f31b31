import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentlab import explore
from latentlab.explore import KnnConfig, batch_rewards, brute_force_rewards, \
    entropy_estimate, intrinsic_reward, knn_distances


LINE = np.array([[0.0], [1.0], [3.0]])


def test_knn_line_k1():
    np.testing.assert_allclose(knn_distances(np.array([0.0]), LINE, 1), [1.0])


def test_knn_line_k2():
    np.testing.assert_allclose(knn_distances(np.array([0.0]), LINE, 2), [1.0, 3.0])


def test_knn_identical_particles():
    pts = np.zeros((5, 3))
    np.testing.assert_allclose(knn_distances(np.zeros(3), pts, 3), [0.0, 0.0, 0.0])


def test_knn_k_too_large():
    with pytest.raises(ValueError):
        knn_distances(np.zeros(1), LINE, 3)


def test_knn_nonmember_query_keeps_all():
    np.testing.assert_allclose(knn_distances(np.array([2.0]), LINE, 2), [1.0, 1.0])


def test_intrinsic_reward_examples():
    cfg = KnnConfig(k=2, avg_top_k=True)
    r = intrinsic_reward(np.array([0.0]), LINE, cfg)
    assert r == pytest.approx(math.log(1 + 2.0))
    cfg1 = KnnConfig(k=1)
    assert intrinsic_reward(np.array([0.0]), LINE, cfg1) == pytest.approx(math.log(2.0))


def test_intrinsic_reward_zero_for_identical():
    pts = np.ones((4, 2))
    assert intrinsic_reward(np.ones(2), pts, KnnConfig(k=2)) == 0.0


def test_kth_neighbor_mode():
    cfg = KnnConfig(k=2, avg_top_k=False)
    r = intrinsic_reward(np.array([0.0]), LINE, cfg)
    assert r == pytest.approx(math.log(1 + 3.0))


def test_literal_log_transform():
    cfg = KnnConfig(k=1, transform="log")
    r = intrinsic_reward(np.array([0.0]), LINE, cfg)
    assert r == pytest.approx(math.log(1.0))


def test_entropy_symmetric_pair():
    pts = np.array([[0.0], [2.0]])
    assert entropy_estimate(pts, 1) == pytest.approx(2 * math.log(1 + 2.0))


def test_entropy_identical_particles():
    assert entropy_estimate(np.ones((6, 2)), 3) == pytest.approx(0.0, abs=1e-6)


def test_entropy_requires_enough_particles():
    with pytest.raises(ValueError):
        entropy_estimate(np.ones((3, 2)), 3)


def test_entropy_matches_quadratic_oracle():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((32, 5))
    cfg = KnnConfig(k=4)
    want = brute_force_rewards(pts, cfg).sum()
    assert entropy_estimate(pts, 4, cfg) == pytest.approx(want, abs=1e-9)


# --- batch rewards ------------------------------------------------------------------


def test_batch_rewards_identical_rows_zero():
    r = batch_rewards(np.ones((8, 3)), KnnConfig(k=3))
    np.testing.assert_allclose(r, 0.0, atol=1e-6)


def test_batch_rewards_permutation_equivariant():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((20, 4))
    cfg = KnnConfig(k=3)
    base = batch_rewards(pts, cfg)
    perm = rng.permutation(20)
    np.testing.assert_allclose(batch_rewards(pts[perm], cfg), base[perm], atol=1e-9)


def test_batch_rewards_too_small():
    with pytest.raises(ValueError):
        batch_rewards(np.ones((12, 2)), KnnConfig(k=12))


def test_batch_rewards_match_bruteforce_oracle():
    rng = np.random.default_rng(2)
    for trial in range(20):
        m = int(rng.integers(14, 64))
        d = int(rng.integers(1, 16))
        k = int(rng.choice([1, 3, 12]))
        pts = rng.standard_normal((m, d)) * rng.uniform(0.1, 5.0)
        for avg in (True, False):
            cfg = KnnConfig(k=k, avg_top_k=avg)
            got = batch_rewards(pts, cfg)
            want = brute_force_rewards(pts, cfg)
            np.testing.assert_allclose(got, want, atol=1e-6)


@given(st.integers(0, 2**31))
@settings(deadline=None, max_examples=25)
def test_scaling_strictly_increases_rewards(seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((16, 3))
    cfg = KnnConfig(k=3)
    base = batch_rewards(pts, cfg)
    scaled = batch_rewards(1.7 * pts, cfg)
    assert np.all(scaled >= base)
    assert np.all(scaled[base > 1e-9] > base[base > 1e-9])


@given(st.integers(0, 2**31), st.floats(-50, 50))
@settings(deadline=None, max_examples=25)
def test_translation_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((16, 3))
    cfg = KnnConfig(k=3)
    np.testing.assert_allclose(
        batch_rewards(pts + shift, cfg), batch_rewards(pts, cfg), atol=1e-6
    )


def test_rewards_nonnegative_under_log1p():
    rng = np.random.default_rng(3)
    r = batch_rewards(rng.standard_normal((30, 4)), KnnConfig(k=5))
    assert np.all(r >= 0.0)


def test_cfg_validation():
    with pytest.raises(ValueError):
        KnnConfig(k=0)
    with pytest.raises(ValueError):
        KnnConfig(transform="sqrt")
