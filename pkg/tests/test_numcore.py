import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentlab import numcore as nc
from latentlab.numcore import tensor as T


def fd_check(loss_fn, params, tol=1e-4, eps=1e-5):
    """Analytic grads vs central finite differences (f64 oracle)."""
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]
    numeric = nc.finite_difference_grads(lambda: float(loss_fn().data), params, eps=eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    assert worst < tol, f"max relative grad error {worst}"
    return worst


def randp(name, shape, rng, scale=0.5):
    return nc.ParamBlock(name, scale * rng.standard_normal(shape))


# --- spec'd scalar cases -------------------------------------------------------


def test_square_gradient_at_three():
    x = nc.ParamBlock("x", np.array([3.0]))
    y = nc.mul(x, x)
    y.backward(np.ones(1))
    assert y.data[0] == pytest.approx(9.0)
    assert x.grad[0] == pytest.approx(6.0)


def test_relu_dead_region():
    x = nc.ParamBlock("x", np.array([-1.0]))
    y = nc.relu(x)
    y.backward(np.ones(1))
    assert y.data[0] == 0.0
    assert x.grad[0] == 0.0


def test_mlp_matches_finite_differences():
    rng = np.random.default_rng(7)
    sizes = [(5, 8), (8, 6), (6, 3)]
    ws = [randp(f"w{i}", s, rng) for i, s in enumerate(sizes)]
    bs = [randp(f"b{i}", (s[1],), rng) for i, s in enumerate(sizes)]
    x = nc.Tensor(rng.standard_normal((4, 5)))

    def loss():
        h = x
        for i, (w, b) in enumerate(zip(ws, bs)):
            h = nc.add(nc.matmul(h, w), b)
            if i < 2:
                h = nc.relu(h)
        return nc.tmean(nc.mul(h, h))

    fd_check(loss, ws + bs)


# --- per-op finite-difference fuzz ----------------------------------------------


@pytest.mark.parametrize(
    "name",
    ["add", "sub", "mul", "matmul", "relu", "tanh", "exp", "log", "softmax",
     "sum", "mean", "l2norm", "cosine", "mse", "minimum", "concat", "bnorm",
     "conv", "xent"],
)
def test_op_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    a = randp("a", (3, 4), rng)
    b = randp("b", (3, 4), rng)

    if name == "add":
        fn, ps = lambda: nc.tsum(nc.add(a, b)), [a, b]
    elif name == "sub":
        fn, ps = lambda: nc.tsum(nc.sub(a, b)), [a, b]
    elif name == "mul":
        fn, ps = lambda: nc.tsum(nc.mul(a, b)), [a, b]
    elif name == "matmul":
        m = randp("m", (4, 2), rng)
        fn, ps = lambda: nc.tsum(nc.mul(nc.matmul(a, m), nc.matmul(a, m))), [a, m]
    elif name == "relu":
        fn, ps = lambda: nc.tsum(nc.relu(a)), [a]
    elif name == "tanh":
        fn, ps = lambda: nc.tsum(nc.tanh(a)), [a]
    elif name == "exp":
        fn, ps = lambda: nc.tsum(nc.exp(a)), [a]
    elif name == "log":
        c = nc.ParamBlock("c", np.abs(a.data) + 0.5)
        fn, ps = lambda: nc.tsum(nc.log(c)), [c]
    elif name == "softmax":
        fn, ps = lambda: nc.tsum(nc.mul(nc.softmax(a, axis=1), b)), [a]
    elif name == "sum":
        fn, ps = lambda: nc.tsum(nc.mul(nc.tsum(a, axis=0, keepdims=True), b)), [a, b]
    elif name == "mean":
        fn, ps = lambda: nc.tsum(nc.mul(nc.tmean(a, axis=1, keepdims=True), b)), [a, b]
    elif name == "l2norm":
        fn, ps = lambda: nc.tsum(nc.mul(nc.l2_normalize(a, axis=1), b)), [a]
    elif name == "cosine":
        fn, ps = lambda: nc.tsum(nc.cosine_similarity(a, b, axis=1)), [a, b]
    elif name == "mse":
        fn, ps = lambda: nc.mse(a, b), [a, b]
    elif name == "minimum":
        fn, ps = lambda: nc.tsum(nc.minimum(a, b)), [a, b]
    elif name == "concat":
        fn, ps = lambda: nc.tsum(nc.mul(nc.concat([a, b], axis=1), nc.concat([b, a], axis=1))), [a, b]
    elif name == "bnorm":
        g = nc.ParamBlock("g", 1.0 + 0.1 * rng.standard_normal(4))
        be = randp("be", (4,), rng)
        rm, rv = np.zeros(4), np.ones(4)
        fn = lambda: nc.tsum(nc.mul(nc.batch_norm(a, g, be, rm, rv, train=True), b))
        ps = [a, g, be]
    elif name == "conv":
        x = randp("x", (2, 6, 6, 3), rng)
        w = randp("w", (3, 3, 3, 4), rng)
        bb = randp("bb", (4,), rng)
        fn, ps = lambda: nc.tmean(nc.mul(nc.conv2d(x, w, bb, stride=2, pad=1),
                                         nc.conv2d(x, w, bb, stride=2, pad=1))), [x, w, bb]
    elif name == "xent":
        logits = randp("lg", (5, 3), rng)
        labels = np.array([0, 2, 1, 1, 0])
        fn, ps = lambda: nc.cross_entropy(logits, labels), [logits]
    else:
        raise AssertionError(name)
    fd_check(fn, ps)


def test_stop_gradient_blocks_flow():
    x = nc.ParamBlock("x", np.array([2.0]))
    y = nc.tsum(nc.mul(x, nc.stop_gradient(nc.mul(x, x))))
    y.backward()
    # d/dx of x * const(x^2) = x^2 = 4, not 3x^2 = 12
    assert x.grad[0] == pytest.approx(4.0)


def test_forward_backward_driver():
    p = nc.ParamBlock("p", np.array([[1.0, -2.0]]))
    out = nc.forward_backward(lambda ps, x: nc.tsum(nc.mul(ps[0], x)), [p], [np.array([[3.0, 5.0]])])
    assert float(out.data) == pytest.approx(1 * 3 - 2 * 5)
    np.testing.assert_allclose(p.grad, [[3.0, 5.0]])


# --- structural error contracts -------------------------------------------------


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(nc.ShapeMismatch) as e:
        nc.matmul(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)


def test_unsupported_op_is_explicit():
    t = nc.Tensor(np.ones(3))
    with pytest.raises(nc.UnsupportedOp):
        t / t
    with pytest.raises(nc.UnsupportedOp):
        t**2


# --- normalization edge cases ----------------------------------------------------


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
@settings(deadline=None)
def test_l2_normalize_unit_norm(vals):
    v = np.array(vals, dtype=np.float64)
    out = nc.l2_normalize(nc.Tensor(v)).data
    if (v * v).sum() == 0:
        # exact-zero (or underflowing) rows pass through unscaled
        np.testing.assert_array_equal(out, v)
    else:
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-6)


def test_zero_vector_cosine_is_zero():
    z = nc.Tensor(np.zeros((1, 4)))
    v = nc.Tensor(np.ones((1, 4)))
    assert float(nc.cosine_similarity(z, v).data) == 0.0


def test_l2_normalize_zero_row_zero_grad():
    p = nc.ParamBlock("p", np.zeros((1, 3)))
    nc.tsum(nc.l2_normalize(p, axis=1)).backward()
    assert np.all(p.grad == 0)


# --- optimizers -------------------------------------------------------------------


def test_sgd_plain_step():
    p = nc.ParamBlock("p", np.array([1.0]))
    p.grad[:] = 1.0
    nc.Sgd([p]).step(lr=0.1)
    assert p.data[0] == pytest.approx(0.9)


def test_sgd_decay_only_step():
    p = nc.ParamBlock("p", np.array([1.0]))
    nc.Sgd([p], weight_decay=0.0005).step(lr=0.1)
    assert p.data[0] == pytest.approx(1 - 0.1 * 0.0005)


def test_sgd_momentum_two_steps():
    # v1 = 1 -> w = 0.9; v2 = 0.9*1 + 1 = 1.9 -> w = 0.9 - 0.19 = 0.71
    p = nc.ParamBlock("p", np.array([1.0]))
    opt = nc.Sgd([p], momentum=0.9)
    for _ in range(2):
        p.grad[:] = 1.0
        opt.step(lr=0.1)
    assert p.data[0] == pytest.approx(0.71)


def test_sgd_rejects_negative_lr():
    p = nc.ParamBlock("p", np.array([1.0]))
    with pytest.raises(ValueError):
        nc.Sgd([p]).step(lr=-0.1)


def test_adam_first_step_is_lr():
    p = nc.ParamBlock("p", np.full(4, 3.0))
    p.grad[:] = 1.0
    nc.Adam([p], lr=0.05, eps=0.0).step()
    np.testing.assert_allclose(p.data, 3.0 - 0.05, rtol=1e-12)


def test_adam_zero_grad_no_move():
    p = nc.ParamBlock("p", np.array([1.5]))
    opt = nc.Adam([p], lr=1e-3)
    for _ in range(5):
        opt.step()
    assert p.data[0] == pytest.approx(1.5)


def test_adam_three_steps_match_scalar_unroll():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    # independent scalar unroll of the update rule
    w, m, v = 1.0, 0.0, 0.0
    want = []
    for t in range(1, 4):
        g = 2.0
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        want.append(w)

    p = nc.ParamBlock("p", np.array([1.0]))
    opt = nc.Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
    got = []
    for _ in range(3):
        p.zero_grad()
        p.grad[:] = 2.0
        opt.step()
        got.append(float(p.data[0]))
    np.testing.assert_allclose(got, want, rtol=1e-10)


def test_cosine_lr_endpoints():
    assert nc.cosine_lr(0, 800, 0.03) == pytest.approx(0.03, abs=1e-15)
    assert nc.cosine_lr(800, 800, 0.03) == pytest.approx(0.0, abs=1e-15)
    assert nc.cosine_lr(400, 800, 0.03) == pytest.approx(0.015, abs=1e-15)
    with pytest.raises(ValueError):
        nc.cosine_lr(0, 0, 0.03)


# --- rng ---------------------------------------------------------------------------


def test_rng_same_seed_same_stream():
    a = nc.Rng(42, 3).normal((5,))
    b = nc.Rng(42, 3).normal((5,))
    np.testing.assert_array_equal(a, b)


def test_rng_streams_differ():
    a = nc.Rng(42, 0).normal((64,))
    b = nc.Rng(42, 1).normal((64,))
    assert not np.array_equal(a, b)


def test_rng_child_deterministic():
    a = nc.Rng(9, 1).child(4).normal((3,))
    b = nc.Rng(9, 1).child(4).normal((3,))
    np.testing.assert_array_equal(a, b)


def test_forward_deterministic_bitwise():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 8)).astype(np.float32)
    w = rng.standard_normal((8, 8)).astype(np.float32)
    out1 = nc.tanh(nc.matmul(nc.Tensor(x), nc.Tensor(w))).data
    out2 = nc.tanh(nc.matmul(nc.Tensor(x), nc.Tensor(w))).data
    assert out1.tobytes() == out2.tobytes()


# --- checkpoint ---------------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {
        "enc/w0": rng.standard_normal((7, 5)).astype(np.float32),
        "enc/b0": rng.standard_normal(5).astype(np.float64),
    }
    meta = {"roles": {"encoder": ["enc/w0", "enc/b0"]}}
    path = tmp_path / "t.ckpt"
    nc.save_checkpoint(path, arrays, meta)
    got, got_meta = nc.load_checkpoint(path)
    assert got_meta == meta
    for k in arrays:
        assert got[k].dtype == arrays[k].dtype
        assert got[k].tobytes() == arrays[k].tobytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(nc.CheckpointError, match="magic"):
        nc.load_checkpoint(path)


@given(st.integers(0, 2**32 - 1))
@settings(deadline=None, max_examples=25)
def test_checkpoint_roundtrip_random(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    arr = rng.standard_normal(rng.integers(1, 40)).astype(np.float32)
    path = tmp_path_factory.mktemp("ck") / "r.ckpt"
    nc.save_checkpoint(path, {"a": arr}, {})
    got, _ = nc.load_checkpoint(path)
    assert got["a"].tobytes() == arr.tobytes()


# --- no_grad ------------------------------------------------------------------------


def test_no_grad_builds_no_tape():
    p = nc.ParamBlock("p", np.ones((2, 2)))
    with nc.no_grad():
        out = nc.matmul(p, p)
    assert out._parents == () and not out.requires_grad
