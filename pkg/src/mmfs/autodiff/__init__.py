"""Reverse-mode automatic differentiation over numpy arrays."""
from . import ops
from .gradcheck import grad_check, relative_error
from .module import Module
from .nn import (
    AttentionParams,
    BatchNorm2d,
    Conv2d,
    Embedding,
    LayerNorm,
    Linear,
    MLPClassifier,
    RunningStats,
    TransformerEncoderLayer,
    batch_norm2d,
    conv2d,
    cross_entropy_loss,
    dropout,
    embedding_lookup,
    layer_norm,
    linear,
    multi_head_attention,
    transformer_encoder_layer,
)
from .ops import (
    add,
    concat,
    elementwise,
    log_softmax,
    masked_mean,
    matmul,
    mean_reduce,
    mul,
    relu,
    reshape,
    select,
    sigmoid,
    softmax,
    sub,
    sum_reduce,
    take_rows,
    tanh,
    transpose,
)
from .optim import adam_step
from .tensor import GradTape, Parameter, Tensor, active_tape, backward

__all__ = [name for name in dir() if not name.startswith("_")]
