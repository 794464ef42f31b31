"""Dense-tensor math with exact reverse-mode gradients.

Everything is numpy-backed. A ``Tensor`` is a node in an ephemeral tape:
ops record their parents and a backward closure, ``backward()`` walks the
tape in reverse topological order. ``ParamBlock`` is a named leaf whose
gradient buffer persists across steps (zeroed by the optimizer cycle).

Determinism contract: reductions use numpy's fixed (pairwise, left-to-right
blocked) order, so identical inputs on the same platform/thread configuration
produce bitwise-identical outputs.
"""

from __future__ import annotations

import contextlib
import ctypes
import logging

import numpy as np

_log = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32


def _tune_allocator():
    """Keep freed heap pages resident (glibc trims aggressively otherwise).

    Training builds and frees a multi-megabyte tape every step; without this
    each step re-faults its pages, which dominates runtime on small hosts.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-1, 1 << 30)   # M_TRIM_THRESHOLD
        libc.mallopt(-3, 1 << 30)   # M_MMAP_THRESHOLD
        libc.mallopt(-2, 64 << 20)  # M_TOP_PAD
    except (OSError, AttributeError):
        pass


_tune_allocator()

# Global tape switch. Inside no_grad() ops do plain numpy math.
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (rollouts, eval, targets)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""

    def __init__(self, op, lhs, rhs):
        super().__init__(f"{op}: incompatible shapes {tuple(lhs)} vs {tuple(rhs)}")
        self.lhs = tuple(lhs)
        self.rhs = tuple(rhs)


class UnsupportedOp(TypeError):
    """Raised for operations outside the supported op set."""

    def __init__(self, name):
        super().__init__(f"unsupported op: {name}")


class Tensor:
    """Autodiff node holding a row-major float array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            # copy: g may alias a consumer's buffer or be a readonly view
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self, seed=None):
        """Reverse-mode sweep from this node. Scalar outputs seed with 1."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() needs a scalar output or an explicit seed; got shape {self.shape}"
                )
            seed = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # free the tape as we go; leaves keep their grads
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node.grad = None if node is not self else node.grad

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        raise UnsupportedOp("div (compose mul with a reciprocal constant instead)")

    def __pow__(self, other):
        raise UnsupportedOp("pow (compose mul/exp/log instead)")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"


class ParamBlock(Tensor):
    """Named trainable leaf. ``grad`` persists and matches ``value`` in shape."""

    __slots__ = ("name",)

    def __init__(self, name, value, requires_grad=True):
        super().__init__(np.array(value, copy=True), requires_grad=requires_grad)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self):
        return self.data

    @value.setter
    def value(self, v):
        self.data = v

    def zero_grad(self):
        self.grad.fill(0.0)

    def _accumulate(self, g):
        # persistent buffer: never replaced, only added into
        self.grad += g

    def __repr__(self):
        return f"ParamBlock({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(dtype or DEFAULT_DTYPE)
    return Tensor(arr)


def _tracked(*nodes):
    return _grad_enabled and any(n.requires_grad for n in nodes)


def _make(data, parents, backward_fn, track):
    out = Tensor(data)
    if track:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape) from None
    track = _tracked(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd, track)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatch("sub", a.shape, b.shape) from None
    track = _tracked(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), bwd, track)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch("mul", a.shape, b.shape) from None
    track = _tracked(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd, track)


def neg(a):
    a = _as_tensor(a)
    track = _tracked(a)

    def bwd(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), bwd, track)


def relu(a):
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)
    track = _tracked(a)

    def bwd(g):
        a._accumulate(g * (a.data > 0))

    return _make(data, (a,), bwd, track)


def tanh(a):
    a = _as_tensor(a)
    t = np.tanh(a.data)
    track = _tracked(a)

    def bwd(g):
        a._accumulate(g * (1.0 - t * t))

    return _make(t, (a,), bwd, track)


def exp(a):
    a = _as_tensor(a)
    e = np.exp(a.data)
    track = _tracked(a)

    def bwd(g):
        a._accumulate(g * e)

    return _make(e, (a,), bwd, track)


def log(a):
    a = _as_tensor(a)
    track = _tracked(a)

    def bwd(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), bwd, track)


def minimum(a, b):
    """Elementwise min; ties route the gradient to ``a`` (subgradient choice)."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = np.minimum(a.data, b.data)
    except ValueError:
        raise ShapeMismatch("minimum", a.shape, b.shape) from None
    track = _tracked(a, b)
    mask = a.data <= b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * mask, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~mask, b.shape))

    return _make(data, (a, b), bwd, track)


# linear algebra / shaping ----------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    data = a.data @ b.data
    track = _tracked(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), bwd, track)


def reshape(a, shape):
    a = _as_tensor(a)
    data = a.data.reshape(shape)
    track = _tracked(a)

    def bwd(g):
        a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), bwd, track)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    track = _grad_enabled and any(t.requires_grad for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(p)

    return _make(data, tensors, bwd, track)


# reductions -------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    track = _tracked(a)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return _make(data, (a,), bwd, track)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.shape[axis]
    track = _tracked(a)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate((np.broadcast_to(g, a.shape) / n).astype(a.dtype, copy=False))

    return _make(data, (a,), bwd, track)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    track = _tracked(a)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate(s * (g - dot))

    return _make(s, (a,), bwd, track)


# geometry / losses -------------------------------------------------------------

def l2_normalize(a, axis=-1, _warn=True):
    """Scale rows to unit norm. Exact zero rows pass through as zeros (flagged)."""
    a = _as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    zero = norm == 0.0
    if zero.any() and _warn:
        _log.debug("l2_normalize: %d zero-norm row(s) passed through", int(zero.sum()))
    safe = np.where(zero, 1.0, norm)
    out = a.data / safe
    track = _tracked(a)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        gx = (g - out * dot) / safe
        a._accumulate(np.where(zero, 0.0, gx).astype(a.dtype, copy=False))

    return _make(out, (a,), bwd, track)


def cosine_similarity(a, b, axis=-1):
    """Row-wise cosine; any zero vector makes the corresponding output 0."""
    return tsum(mul(l2_normalize(a, axis), l2_normalize(b, axis)), axis=axis)


def mse(pred, target):
    d = sub(pred, target)
    return tmean(mul(d, d))


def stop_gradient(a):
    """Treat ``a`` as a constant: forward passes through, no gradient flows."""
    a = _as_tensor(a)
    return Tensor(a.data)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy. ``labels`` are integer class ids."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch("cross_entropy", logits.shape, labels.shape)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    track = _tracked(logits)

    def bwd(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        logits._accumulate((g * p / n).astype(logits.dtype, copy=False))

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bwd, track)


# batch norm --------------------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """BatchNorm over axis 0 of a 2-D input.

    ``running_mean``/``running_var`` are plain numpy buffers updated in place
    during training (biased variance, consistent with normalization).
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],):
        raise ShapeMismatch("batch_norm", x.shape, gamma.shape)
    if train:
        m = x.data.mean(axis=0)
        v = x.data.var(axis=0)
        running_mean += momentum * (m - running_mean)
        running_var += momentum * (v - running_var)
    else:
        m, v = running_mean, running_var
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m) * inv
    out = xhat * gamma.data + beta.data
    track = _tracked(x, gamma, beta)

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=0))
        if x.requires_grad:
            if train:
                n = x.shape[0]
                gx = g * gamma.data
                dx = (inv / n) * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                dx = g * gamma.data * inv
            x._accumulate(dx.astype(x.dtype, copy=False))

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), bwd, track)


# small 2-D convolution (NHWC, stride-s, zero padding) ----------------------------
# Shift-and-matmul scheme: one strided slice + one small GEMM per kernel
# offset. Gathers are pathological on some hosts; slices and GEMMs are not.


def _patch_conv(x, w, b, track):
    """Non-overlapping (kernel == stride, no pad) convolution: the im2col is
    a single reshape/transpose, which is far cheaper than strided slicing."""
    bsz, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    oh, ow = h // kh, wd // kw
    rows = bsz * oh * ow
    cols = np.ascontiguousarray(
        x.data.reshape(bsz, oh, kh, ow, kw, cin).transpose(0, 1, 3, 2, 4, 5)
    ).reshape(rows, kh * kw * cin)
    wf = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wf + b.data).reshape(bsz, oh, ow, cout)

    def bwd(g):
        gcols = np.ascontiguousarray(g).reshape(rows, cout)
        if w.requires_grad:
            w._accumulate((cols.T @ gcols).reshape(w.shape))
        if b.requires_grad:
            b._accumulate(gcols.sum(axis=0))
        if x.requires_grad:
            dcols = (gcols @ wf.T).reshape(bsz, oh, ow, kh, kw, cin)
            x._accumulate(
                np.ascontiguousarray(dcols.transpose(0, 1, 3, 2, 4, 5)).reshape(x.shape)
            )

    return _make(out, (x, w, b), bwd, track)


def conv2d(x, w, b, stride=1, pad=0):
    """2-D convolution, x (B,H,W,Cin), w (kh,kw,Cin,Cout), b (Cout,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeMismatch("conv2d", x.shape, w.shape)
    bsz, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch("conv2d", x.shape, w.shape)
    if pad == 0 and kh == stride and kw == stride and h % kh == 0 and wd % kw == 0:
        return _patch_conv(x, w, b, _tracked(x, w, b))
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    rows = bsz * oh * ow
    out = np.empty((rows, cout), dtype=x.dtype.type)
    out[:] = b.data
    cols = []  # per-offset (rows, cin) contiguous slices, reused in backward
    for i in range(kh):
        for j in range(kw):
            sl = np.ascontiguousarray(
                xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
            ).reshape(rows, cin)
            cols.append(sl)
            out += sl @ w.data[i, j]
    out = out.reshape(bsz, oh, ow, cout)
    track = _tracked(x, w, b)

    def bwd(g):
        gcols = np.ascontiguousarray(g).reshape(rows, cout)
        need_dx = x.requires_grad
        dxp = np.zeros_like(xp) if need_dx else None
        if w.requires_grad:
            dw = np.empty_like(w.data)
        for idx in range(kh * kw):
            i, j = divmod(idx, kw)
            if w.requires_grad:
                dw[i, j] = cols[idx].T @ gcols
            if need_dx:
                # per kernel offset the write targets are disjoint strided slices
                dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += (
                    gcols @ w.data[i, j].T
                ).reshape(bsz, oh, ow, cin)
        if w.requires_grad:
            w._accumulate(dw)
        if b.requires_grad:
            b._accumulate(gcols.sum(axis=0))
        if need_dx:
            x._accumulate(dxp[:, pad : pad + h, pad : pad + wd, :] if pad else dxp)

    return _make(out, (x, w, b), bwd, track)


# spec-level driver ----------------------------------------------------------------

def forward_backward(graph_fn, params, inputs):
    """Run ``graph_fn(params, *input_nodes)``, backprop, populate param grads.

    Grads are zeroed first, so the populated values are exactly the analytic
    derivatives of the (scalar) output w.r.t. each ParamBlock.
    """
    for p in params:
        p.zero_grad()
    nodes = [_as_tensor(x) for x in inputs]
    out = graph_fn(params, *nodes)
    head = out[0] if isinstance(out, tuple) else out
    head.backward()
    return out


def finite_difference_grads(loss_fn, params, eps=1e-5):
    """Central-difference gradients of ``loss_fn() -> float`` w.r.t. each param.

    Independent oracle: only calls the forward pass. Intended for f64 params.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            dn = loss_fn()
            flat[i] = orig
            gflat[i] = (up - dn) / (2 * eps)
        grads.append(g)
    return grads
