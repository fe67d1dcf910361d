"""Registry of finite-difference gradient checks run by ``mmfs gradcheck``.

Each case builds a small, fixed-seed problem and returns ``(f, x)``: a scalar
function and the tensor it is differentiated against. The scalar is a random
fixed projection of the layer output, so every output coordinate contributes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import nn, ops
from .autodiff.gradcheck import grad_check
from .autodiff.tensor import Parameter, Tensor
from .fusion import FusionConfig, FusionKind, FusionModel
from .image import BottleneckBlock, EncodedImage, ImageEncoder, ImageEncoderConfig, ResidualBlock, encode_image
from .text import EncodedText, TextEncoder, TextEncoderConfig, encode_text

SCOPES = ("ops", "encoders", "fusion")
DEFAULT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GradCase:
    name: str
    scope: str
    build: Callable[[], tuple]
    coords: Optional[int] = None


@dataclass
class GradResult:
    name: str
    scope: str
    error: float
    passed: bool
    message: str = ""

    def row(self, tol: float) -> str:
        if self.message:
            return f"{self.scope:<9} {self.name:<38} ERROR {self.message}"
        verdict = "PASS" if self.passed else "FAIL"
        cmp = "<" if self.passed else ">="
        return f"{self.scope:<9} {self.name:<38} {self.error:.3e} {cmp} {tol:g} {verdict}"


REGISTRY: list[GradCase] = []


def register(name: str, scope: str, coords: Optional[int] = None):
    def deco(build):
        REGISTRY.append(GradCase(name, scope, build, coords))
        return build
    return deco


def _rng(tag: int) -> np.random.Generator:
    return np.random.default_rng(1000 + tag)


def _probe(shape, tag: int) -> np.ndarray:
    return _rng(tag).normal(size=shape)


def _scalar(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum_reduce(ops.mul(out, weights))


def _param(shape, tag: int, scale: float = 1.0) -> Parameter:
    return Parameter(_rng(tag).normal(scale=scale, size=shape))


def _unary(fn, shape=(3, 4), tag=0, away_from_zero=False):
    x = _param(shape, tag)
    if away_from_zero:
        # keep relu inputs clear of the kink
        x.data = np.sign(x.data) * (np.abs(x.data) + 0.1)
    w = _probe(fn(x.detach()).shape, tag + 1)
    return (lambda t: _scalar(fn(t), w)), x


# ----------------------------------------------------------------------------
# ops

@register("add (broadcast)", "ops")
def _case_add():
    b = _param((4,), 2).detach()
    return _unary(lambda t: ops.add(t, b))


@register("sub", "ops")
def _case_sub():
    b = _param((3, 4), 3).detach()
    return _unary(lambda t: ops.sub(b, t))


@register("mul (broadcast)", "ops")
def _case_mul():
    b = _param((3, 1), 4).detach()
    return _unary(lambda t: ops.mul(t, b))


@register("relu", "ops")
def _case_relu():
    return _unary(ops.relu, away_from_zero=True)


@register("sigmoid", "ops")
def _case_sigmoid():
    return _unary(ops.sigmoid)


@register("tanh", "ops")
def _case_tanh():
    return _unary(ops.tanh)


@register("matmul (batched)", "ops")
def _case_matmul():
    b = _param((2, 4, 5), 5).detach()
    return _unary(lambda t: ops.matmul(t, b), shape=(2, 3, 4))


@register("matmul (shared right)", "ops")
def _case_matmul_shared():
    a = _param((2, 3, 4), 6).detach()
    return _unary(lambda t: ops.matmul(a, t), shape=(4, 5))


@register("reshape + transpose", "ops")
def _case_shape():
    return _unary(lambda t: ops.transpose(ops.reshape(t, (2, 3, 2)), (2, 0, 1)), shape=(3, 4))


@register("select", "ops")
def _case_select():
    return _unary(lambda t: ops.select(t, 1, 2), shape=(2, 4, 3))


@register("take_rows (repeated ids)", "ops")
def _case_take_rows():
    ids = np.array([[0, 2, 2], [4, 0, 1]])
    return _unary(lambda t: ops.take_rows(t, ids), shape=(5, 3))


@register("concat", "ops")
def _case_concat():
    b = _param((2, 2, 3), 7).detach()
    return _unary(lambda t: ops.concat([b, t, t], dim=1), shape=(2, 1, 3))


@register("sum_reduce", "ops")
def _case_sum():
    return _unary(lambda t: ops.sum_reduce(t, dim=1, keepdims=True), shape=(2, 3, 4))


@register("mean_reduce", "ops")
def _case_mean():
    return _unary(lambda t: ops.mean_reduce(t, dim=0), shape=(3, 4))


@register("masked_mean", "ops")
def _case_masked_mean():
    mask = np.array([[True, True, False, False], [True, True, True, True]])
    return _unary(lambda t: ops.masked_mean(t, mask, dim=1), shape=(2, 4, 3))


@register("softmax", "ops")
def _case_softmax():
    return _unary(lambda t: ops.softmax(t, dim=-1), shape=(3, 5))


@register("softmax (masked)", "ops")
def _case_softmax_masked():
    mask = np.array([[True, False, True, True], [False, True, True, False], [True, True, True, True]])
    return _unary(lambda t: ops.softmax(t, dim=-1, mask=mask), shape=(3, 4))


@register("log_softmax", "ops")
def _case_log_softmax():
    return _unary(lambda t: ops.log_softmax(t, dim=0), shape=(4, 3))


@register("linear", "ops")
def _case_linear():
    w, b = _param((4, 5), 8).detach(), _param((5,), 9).detach()
    return _unary(lambda t: nn.linear(t, w, b), shape=(2, 3, 4))


@register("linear (weight)", "ops")
def _case_linear_w():
    x = _param((6, 4), 10).detach()
    return _unary(lambda t: nn.linear(x, t), shape=(4, 3))


@register("layer_norm", "ops")
def _case_layer_norm():
    g, b = _param((5,), 11).detach(), _param((5,), 12).detach()
    return _unary(lambda t: nn.layer_norm(t, g, b), shape=(2, 3, 5))


@register("layer_norm (gain)", "ops")
def _case_layer_norm_gain():
    x, b = _param((4, 5), 13).detach(), _param((5,), 14).detach()
    return _unary(lambda g: nn.layer_norm(x, g, b), shape=(5,))


@register("batch_norm2d (train)", "ops")
def _case_bn_train():
    g, b = _param((3,), 15).detach(), _param((3,), 16).detach()
    stats = nn.RunningStats(3)
    return _unary(lambda t: nn.batch_norm2d(t, g, b, stats, training=True), shape=(2, 3, 3, 2))


@register("batch_norm2d (eval)", "ops")
def _case_bn_eval():
    g, b = _param((3,), 17).detach(), _param((3,), 18).detach()
    stats = nn.RunningStats(3)
    stats.mean, stats.var = _rng(19).normal(size=3), _rng(20).uniform(0.5, 2.0, size=3)
    return _unary(lambda t: nn.batch_norm2d(t, g, b, stats, training=False), shape=(2, 3, 3, 2))


@register("conv2d (stride 1, pad 1)", "ops")
def _case_conv():
    w = _param((4, 2, 3, 3), 21).detach()
    return _unary(lambda t: nn.conv2d(t, w, stride=1, padding=1), shape=(2, 2, 5, 5))


@register("conv2d (stride 2, kernel)", "ops")
def _case_conv_w():
    x = _param((2, 2, 6, 5), 22).detach()
    return _unary(lambda t: nn.conv2d(x, t, stride=2, padding=1), shape=(3, 2, 3, 3))


@register("embedding_lookup", "ops")
def _case_embedding():
    ids = np.array([[1, 3, 3, 0]])
    return _unary(lambda t: nn.embedding_lookup(t, ids), shape=(4, 3))


@register("dropout (fixed mask)", "ops")
def _case_dropout():
    return _unary(lambda t: nn.dropout(t, 0.4, True, np.random.default_rng(0)), shape=(4, 5))


@register("cross_entropy_loss", "ops")
def _case_ce():
    x = _param((4, 3), 23)
    labels = np.array([0, 2, 1, 2])
    return (lambda t: nn.cross_entropy_loss(t, labels)), x


@register("multi_head_attention (masked)", "ops")
def _case_mha():
    params = nn.AttentionParams(4, 2, _rng(24))
    kv = _param((2, 3, 4), 25).detach()
    mask = np.array([[True, True, False], [True, True, True]])
    return _unary(lambda t: multi_head_attention_out(t, kv, params, mask), shape=(2, 2, 4))


def multi_head_attention_out(q, kv, params, mask):
    return nn.multi_head_attention(q, kv, params, key_mask=mask)[0]


@register("attention (key weights)", "ops")
def _case_mha_wk():
    params = nn.AttentionParams(4, 2, _rng(26))
    x = _param((2, 3, 4), 27).detach()
    w = _probe((2, 3, 4), 28)
    return (lambda t: _scalar(nn.multi_head_attention(x, x, params)[0], w)), params.w_k


@register("transformer_encoder_layer", "ops")
def _case_layer():
    layer = nn.TransformerEncoderLayer(4, 2, _rng(29))
    mask = np.array([[True, True, True], [True, True, False]])
    return _unary(lambda t: layer(t, mask=mask), shape=(2, 3, 4))


# ----------------------------------------------------------------------------
# encoders

_TEXT_CFG = TextEncoderConfig(vocab_size=12, embed_dim=8, num_heads=2, num_layers=2, max_seq_len=5, dropout=0.0)
_IDS = np.array([[2, 7, 9, 0, 0], [2, 5, 11, 6, 8]])
_MASK = _IDS != 0


def _text_case(pick: Callable[[TextEncoder], Parameter], pooling: str = "cls", tag: int = 30):
    cfg = TextEncoderConfig(**{**_TEXT_CFG.to_dict(), "pooling": pooling})
    enc = TextEncoder(cfg, _rng(tag))
    wh, wf = _probe((2, 5, 8), tag + 1), _probe((2, 8), tag + 2)

    def f(_):
        out = encode_text(_IDS, _MASK, enc)
        return ops.add(_scalar(out.H, wh), _scalar(out.F, wf))
    return f, pick(enc)


@register("text encoder: token embedding", "encoders", coords=40)
def _case_text_tok():
    return _text_case(lambda e: e.token_embedding.table)


@register("text encoder: layer 0 query", "encoders", coords=40)
def _case_text_q():
    return _text_case(lambda e: e.layers[0].attn.w_q, tag=33)


@register("text encoder: layer 1 ffn", "encoders", coords=40)
def _case_text_ffn():
    return _text_case(lambda e: e.layers[1].ff1.w, tag=36)


@register("text encoder: pooler (mean pooling)", "encoders", coords=40)
def _case_text_pool():
    return _text_case(lambda e: e.pooler.w, pooling="mean", tag=39)


def _block_case(block, shape, tag):
    x = _param(shape, tag)
    w = _probe(block(x.detach(), training=True).shape, tag + 1)
    return (lambda t: _scalar(block(t, training=True), w)), x


@register("residual block (downsample)", "encoders", coords=40)
def _case_block():
    return _block_case(ResidualBlock(2, 4, 2, _rng(42)), (2, 2, 4, 4), 43)


@register("residual block (identity shortcut)", "encoders", coords=40)
def _case_block_id():
    return _block_case(ResidualBlock(3, 3, 1, _rng(45)), (2, 3, 3, 3), 46)


@register("bottleneck block", "encoders", coords=40)
def _case_bottleneck():
    return _block_case(BottleneckBlock(4, 8, 2, _rng(48)), (2, 4, 4, 4), 49)


_IMAGE_CFG = ImageEncoderConfig(image_size=6, stem_channels=3, stages=[(1, 4, 1), (1, 6, 2)])


def _image_case(pick, tag):
    enc = ImageEncoder(_IMAGE_CFG, _rng(tag))
    images = _rng(tag + 1).normal(size=(2, 3, 6, 6))
    wh, wf = _probe((2, 9, 6), tag + 2), _probe((2, 6), tag + 3)

    def f(_):
        out = encode_image(images, enc, training=True)
        return ops.add(_scalar(out.H, wh), _scalar(out.F, wf))
    return f, pick(enc)


@register("image encoder: stem conv", "encoders", coords=40)
def _case_img_stem():
    return _image_case(lambda e: e.stem_conv.w, 51)


@register("image encoder: last block bn", "encoders")
def _case_img_bn():
    return _image_case(lambda e: e.blocks[-1].bn2.gamma, 55)


# ----------------------------------------------------------------------------
# fusion heads

_DT, _DI = 6, 5


def _encodings(tag):
    text_mask = np.array([[True, True, False], [True, True, True]])
    enc_t = EncodedText(Tensor(_rng(tag).normal(size=(2, 3, _DT))), Tensor(_rng(tag + 1).normal(size=(2, _DT))),
                        text_mask)
    enc_i = EncodedImage(Tensor(_rng(tag + 2).normal(size=(2, 4, _DI))), Tensor(_rng(tag + 3).normal(size=(2, _DI))))
    return enc_t, enc_i


def _fusion_case(kind: FusionKind, wrt: str, tag: int, literal=False):
    """``wrt`` is ``"text_H"``, ``"text_F"``, ``"image_H"``, ``"image_F"`` or a parameter name."""
    model = FusionModel(kind, FusionConfig(d_model=4, num_heads=2, dropout=0.0, ote_literal_concat=literal),
                        _DT, _DI, _rng(tag))
    enc_t, enc_i = _encodings(tag + 10)
    w = _probe((2, 3), tag + 20)
    leaves = {"text_H": enc_t.H, "text_F": enc_t.F, "image_H": enc_i.H, "image_F": enc_i.F}
    x = leaves[wrt] if wrt in leaves else model.named_parameters()[wrt]
    x.requires_grad = True

    def f(_):
        return _scalar(model(enc_t, enc_i).logits, w)
    return f, x


@register("CMAC: text hidden states", "fusion")
def _case_cmac_h():
    return _fusion_case(FusionKind.CMAC, "text_H", 60)


@register("CMAC: image hidden states", "fusion")
def _case_cmac_hi():
    return _fusion_case(FusionKind.CMAC, "image_H", 61)


@register("CMAC: text-to-image query", "fusion")
def _case_cmac_q():
    return _fusion_case(FusionKind.CMAC, "attn_t2i.w_q", 62)


@register("HSTEC: text hidden states", "fusion")
def _case_hstec_h():
    return _fusion_case(FusionKind.HSTEC, "text_H", 63)


@register("HSTEC: image features", "fusion")
def _case_hstec_f():
    return _fusion_case(FusionKind.HSTEC, "image_F", 64)


@register("HSTEC: encoder ffn", "fusion", coords=40)
def _case_hstec_ffn():
    return _fusion_case(FusionKind.HSTEC, "encoder.ff1.w", 65)


@register("OTE: text features", "fusion")
def _case_ote_t():
    return _fusion_case(FusionKind.OTE, "text_F", 66)


@register("OTE: image projection", "fusion")
def _case_ote_p():
    return _fusion_case(FusionKind.OTE, "proj_fi.w", 67)


@register("OTE (literal concat): text features", "fusion")
def _case_ote_lit():
    return _fusion_case(FusionKind.OTE, "text_F", 68, literal=True)


@register("NativeCat: image features", "fusion")
def _case_cat_i():
    return _fusion_case(FusionKind.NativeCat, "image_F", 69)


@register("NativeCat: classifier", "fusion")
def _case_cat_clf():
    return _fusion_case(FusionKind.NativeCat, "classifier.fc1.w", 70)


@register("NativeCombine: text features", "fusion")
def _case_comb_t():
    return _fusion_case(FusionKind.NativeCombine, "text_F", 71)


@register("NativeCombine: image classifier", "fusion")
def _case_comb_clf():
    return _fusion_case(FusionKind.NativeCombine, "image_classifier.fc2.w", 72)


@register("TextOnly: text features", "fusion")
def _case_text_only():
    return _fusion_case(FusionKind.TextOnly, "text_F", 73)


@register("ImageOnly: image features", "fusion")
def _case_image_only():
    return _fusion_case(FusionKind.ImageOnly, "image_F", 74)


# ----------------------------------------------------------------------------


def cases(scope: str = "all") -> list[GradCase]:
    if scope != "all" and scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; choose from {', '.join(SCOPES + ('all',))}")
    return [c for c in REGISTRY if scope == "all" or c.scope == scope]


def run_case(case: GradCase, tol: float = DEFAULT_TOLERANCE) -> GradResult:
    try:
        f, x = case.build()
        err = grad_check(f, x, coords=case.coords, rng=np.random.default_rng(0))
    except Exception as exc:  # report, keep going through the table
        return GradResult(case.name, case.scope, float("nan"), False, f"{type(exc).__name__}: {exc}")
    return GradResult(case.name, case.scope, err, err < tol)


def run_gradchecks(scope: str = "all", tol: float = DEFAULT_TOLERANCE) -> list[GradResult]:
    return [run_case(c, tol) for c in cases(scope)]
