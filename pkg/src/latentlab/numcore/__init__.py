"""Numerical core: tensors with reverse-mode gradients, optimizers, RNG, checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import Adam, Sgd, cosine_lr
from .rng import Rng
from .tensor import (
    DEFAULT_DTYPE,
    ParamBlock,
    ShapeMismatch,
    Tensor,
    UnsupportedOp,
    add,
    batch_norm,
    concat,
    conv2d,
    cosine_similarity,
    cross_entropy,
    exp,
    finite_difference_grads,
    forward_backward,
    l2_normalize,
    log,
    matmul,
    minimum,
    mse,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    softmax,
    stop_gradient,
    sub,
    tanh,
    tmean,
    tsum,
)

__all__ = [
    "Adam",
    "CheckpointError",
    "DEFAULT_DTYPE",
    "ParamBlock",
    "Rng",
    "Sgd",
    "ShapeMismatch",
    "Tensor",
    "UnsupportedOp",
    "add",
    "batch_norm",
    "concat",
    "conv2d",
    "cosine_lr",
    "cosine_similarity",
    "cross_entropy",
    "exp",
    "finite_difference_grads",
    "forward_backward",
    "l2_normalize",
    "load_checkpoint",
    "log",
    "matmul",
    "minimum",
    "mse",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "save_checkpoint",
    "softmax",
    "stop_gradient",
    "sub",
    "tanh",
    "tmean",
    "tsum",
]
