"""Neural network layers built on the tape.

Each layer exists as a function taking explicit parameters (the form the
gradient checks exercise) and as a small :class:`Module` owning them.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import (
    DegenerateBatchError,
    IndexOutOfRangeError,
    InvalidProbabilityError,
    KernelTooLargeError,
    ShapeMismatchError,
)
from . import ops
from .module import Module
from .tensor import Parameter, Tensor, as_tensor, make_result


def _init(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    # Glorot normal
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=shape)


# ----------------------------------------------------------------------------
# functional forms


def linear(x, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w + b`` over the trailing axis of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatchError(f"linear: input {x.shape} does not match weight {w.shape}")
    if x.ndim == 1:
        out = ops.reshape(ops.matmul(ops.reshape(x, (1, -1)), w), (w.shape[1],))
    else:
        out = ops.matmul(x, w)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeMismatchError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out = ops.add(out, b)
    return out


def layer_norm(x, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatchError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def back(g):
        red = tuple(range(g.ndim - 1))
        dxhat = g * gd
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_result("layer_norm", xhat * gd + beta.data, (x, gamma, beta), back)


class RunningStats:
    """Batch-norm running mean/variance, updated only in training mode."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)


def batch_norm2d(x, gamma: Tensor, beta: Tensor, running_stats: RunningStats, training: bool,
                 eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != gamma.shape[0] or gamma.shape != beta.shape:
        raise ShapeMismatchError(f"batch_norm2d: input {x.shape} vs channel params {gamma.shape}")
    B, C, H, W = x.shape
    shape = (1, C, 1, 1)
    gd = gamma.data.reshape(shape)
    if training:
        n = B * H * W
        if n < 2:
            raise DegenerateBatchError("batch_norm2d in training mode needs B*H*W >= 2")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_stats.mean = (1 - momentum) * running_stats.mean + momentum * mu.reshape(C)
        running_stats.var = (1 - momentum) * running_stats.var + momentum * var.reshape(C) * n / (n - 1)

        def back(g):
            dxhat = g * gd
            gx = inv * (dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    else:
        inv = 1.0 / np.sqrt(running_stats.var.reshape(shape) + eps)
        xhat = (x.data - running_stats.mean.reshape(shape)) * inv

        def back(g):
            return g * gd * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    out = xhat * gd + beta.data.reshape(shape)
    return make_result("batch_norm2d", out, (x, gamma, beta), back)


def conv2d(x, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded cross-correlation, NCHW layout, via im2col."""
    x = as_tensor(x)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    if stride < 1:
        raise ShapeMismatchError(f"conv2d: stride must be >= 1, got {stride}")
    B, C, H, W = x.shape
    Co, _, kh, kw = w.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise KernelTooLargeError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wm = w.data.reshape(Co, -1)
    out = (cols @ wm.T).reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, Co)
        gw = (gm.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            # col2im, accumulated channels-last (faster strided adds)
            gcols = (gm @ wm).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros((B, Hp, Wp, C))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += gcols[..., i, j]
            gx = gxp[:, padding:padding + H, padding:padding + W, :].transpose(0, 3, 1, 2)
        return gx, gw

    return make_result("conv2d", np.ascontiguousarray(out), (x, w), back)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; output has shape ``ids.shape + (d,)``."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])].reshape(-1)[0]
        raise IndexOutOfRangeError(f"token id {int(bad)} outside vocabulary of size {table.shape[0]}")
    return ops.take_rows(table, ids)


def dropout(x, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity at inference or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise InvalidProbabilityError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy_loss(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(f"cross_entropy_loss: logits {logits.shape} vs labels {labels.shape}")
    B, K = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        bad = labels[(labels < 0) | (labels >= K)][0]
        raise IndexOutOfRangeError(f"label {int(bad)} outside [0, {K})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = (lse - z[rows, labels]).mean()

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / B,)

    return make_result("cross_entropy", np.asarray(loss), (logits,), back)


# ----------------------------------------------------------------------------
# modules


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = Parameter(_init(rng, (d_in, d_out), d_in, d_out))
        self.b = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return linear(x, self.w, self.b)

    def _children(self):
        yield "w", self.w
        if self.b is not None:
            yield "b", self.b


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self._stats = RunningStats(channels)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x) -> Tensor:
        return batch_norm2d(x, self.gamma, self.beta, self._stats, self.training, self.eps, self.momentum)

    def buffers(self):
        return {"running_mean": self._stats.mean, "running_var": self._stats.var}

    def set_buffer(self, name, value):
        if name == "running_mean":
            self._stats.mean = value
        elif name == "running_var":
            self._stats.var = value
        else:
            raise KeyError(name)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        fan_in = c_in * kernel * kernel
        # He normal; convolutions here are always followed by batch norm + relu
        self.w = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel)))
        self.stride = stride
        self.padding = padding

    def __call__(self, x) -> Tensor:
        return conv2d(x, self.w, self.stride, self.padding)


class Embedding(Module):
    def __init__(self, num: int, d: int, rng: np.random.Generator, scale: float = 1.0):
        self.table = Parameter(rng.normal(0.0, scale, size=(num, d)))

    def __call__(self, ids) -> Tensor:
        return embedding_lookup(self.table, ids)


class AttentionParams(Module):
    """Projections of one multi-head attention block.

    The key projection has no bias: a shared key offset shifts every score
    in a row equally and cancels in the softmax.
    """

    def __init__(self, d: int, num_heads: int, rng: np.random.Generator):
        if num_heads < 1 or d % num_heads:
            raise ShapeMismatchError(f"model dim {d} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.model_dim = d
        self.w_q = Parameter(_init(rng, (d, d), d, d))
        self.b_q = Parameter(np.zeros(d))
        self.w_k = Parameter(_init(rng, (d, d), d, d))
        self.w_v = Parameter(_init(rng, (d, d), d, d))
        self.b_v = Parameter(np.zeros(d))
        self.w_o = Parameter(_init(rng, (d, d), d, d))
        self.b_o = Parameter(np.zeros(d))

    def zero_output(self):
        self.w_o.data[...] = 0.0
        self.b_o.data[...] = 0.0


def multi_head_attention(q_src, kv_src, params: AttentionParams,
                         key_mask: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention with ``params.num_heads`` heads.

    ``key_mask`` is boolean ``[B, S_kv]``; false marks a key to ignore.
    Returns the projected output ``[B, S_q, d]`` and the weights
    ``[B, h, S_q, S_kv]``.
    """
    q_src, kv_src = as_tensor(q_src), as_tensor(kv_src)
    d, h = params.model_dim, params.num_heads
    if q_src.ndim != 3 or kv_src.ndim != 3 or q_src.shape[-1] != d or kv_src.shape[-1] != d \
            or q_src.shape[0] != kv_src.shape[0]:
        raise ShapeMismatchError(f"attention: query {q_src.shape} / key-value {kv_src.shape} vs model dim {d}")
    B, Sq, _ = q_src.shape
    Skv = kv_src.shape[1]
    dh = d // h
    q = ops.transpose(ops.reshape(linear(q_src, params.w_q, params.b_q), (B, Sq, h, dh)), (0, 2, 1, 3))
    k = ops.transpose(ops.reshape(linear(kv_src, params.w_k), (B, Skv, h, dh)), (0, 2, 3, 1))
    v = ops.transpose(ops.reshape(linear(kv_src, params.w_v, params.b_v), (B, Skv, h, dh)), (0, 2, 1, 3))
    scores = ops.mul(ops.matmul(q, k), 1.0 / math.sqrt(dh))
    mask = None
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (B, Skv):
            raise ShapeMismatchError(f"key mask {key_mask.shape} does not match keys {(B, Skv)}")
        mask = key_mask[:, None, None, :]
    weights = ops.softmax(scores, dim=-1, mask=mask)
    ctx = ops.reshape(ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3)), (B, Sq, d))
    return linear(ctx, params.w_o, params.b_o), weights


class TransformerEncoderLayer(Module):
    """Pre-norm encoder layer: self-attention then a 4x-wide ReLU FFN."""

    def __init__(self, d: int, num_heads: int, rng: np.random.Generator, dropout: float = 0.0):
        self.ln1 = LayerNorm(d)
        self.attn = AttentionParams(d, num_heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(d, 4 * d, rng)
        self.ff2 = Linear(4 * d, d, rng)
        self.dropout = dropout

    def zero_output(self):
        """Zero both sublayer output projections, making the layer an identity."""
        self.attn.zero_output()
        self.ff2.w.data[...] = 0.0
        self.ff2.b.data[...] = 0.0

    def __call__(self, x, mask=None, rng=None, return_weights=False):
        out, w = transformer_encoder_layer(x, self, mask, self.training, rng, return_weights=True)
        return (out, w) if return_weights else out


def transformer_encoder_layer(x, params: TransformerEncoderLayer, mask: Optional[np.ndarray] = None,
                              training: bool = False, rng: Optional[np.random.Generator] = None,
                              return_weights: bool = False):
    x = as_tensor(x)
    normed = params.ln1(x)
    attn_out, weights = multi_head_attention(normed, normed, params.attn, key_mask=mask)
    x = ops.add(x, dropout(attn_out, params.dropout, training, rng))
    hidden = ops.relu(params.ff1(params.ln2(x)))
    x = ops.add(x, dropout(params.ff2(hidden), params.dropout, training, rng))
    return (x, weights) if return_weights else x


class MLPClassifier(Module):
    """linear -> relu -> dropout -> linear, producing unnormalized logits."""

    def __init__(self, d_in: int, hidden: int, num_classes: int, rng: np.random.Generator,
                 dropout: float = 0.0):
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, num_classes, rng)
        self.dropout = dropout

    def zero_(self):
        for p in self.parameters():
            p.data[...] = 0.0

    def __call__(self, x, rng=None) -> Tensor:
        h = dropout(ops.relu(self.fc1(x)), self.dropout, self.training, rng)
        return self.fc2(h)
