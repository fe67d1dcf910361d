"""Text/image fusion heads and the two unimodal baselines.

Every head maps an :class:`EncodedText` and an :class:`EncodedImage` to a
:class:`FusionOutput`. Two-branch heads (CMAC, HSTEC, NativeCombine) sum
their branch logits before a single softmax.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.module import Module
from .autodiff.nn import AttentionParams, Linear, MLPClassifier, TransformerEncoderLayer, multi_head_attention
from .autodiff.tensor import Tensor, as_tensor
from .exceptions import EmptyClassAxisError, KindMismatchError, ShapeMismatchError
from .image import EncodedImage
from .text import EncodedText


class FusionKind(enum.Enum):
    CMAC = "CMAC"
    HSTEC = "HSTEC"
    OTE = "OTE"
    NativeCat = "NativeCat"
    NativeCombine = "NativeCombine"
    TextOnly = "TextOnly"
    ImageOnly = "ImageOnly"

    @property
    def table_name(self) -> str:
        return _TABLE_NAMES[self]

    @property
    def uses_text(self) -> bool:
        return self is not FusionKind.ImageOnly

    @property
    def uses_image(self) -> bool:
        return self is not FusionKind.TextOnly

    @property
    def is_multimodal(self) -> bool:
        return self.uses_text and self.uses_image

    @classmethod
    def parse(cls, name: str) -> "FusionKind":
        key = name.strip().lower()
        for kind in cls:
            if key in (kind.value.lower(), kind.table_name.lower()):
                return kind
        valid = ", ".join(k.value for k in cls)
        raise KindMismatchError(f"unknown model kind {name!r}; valid kinds: {valid}")


_TABLE_NAMES = {
    FusionKind.TextOnly: "Bert",
    FusionKind.ImageOnly: "ResNet",
    FusionKind.CMAC: "CMACModel",
    FusionKind.HSTEC: "HSTECModel",
    FusionKind.OTE: "OTEModel",
    FusionKind.NativeCat: "NativeCatModel",
    FusionKind.NativeCombine: "NativeCombineModel",
}

# row order of the comparison table
TABLE_ORDER = (FusionKind.TextOnly, FusionKind.ImageOnly, FusionKind.CMAC, FusionKind.HSTEC,
               FusionKind.OTE, FusionKind.NativeCat, FusionKind.NativeCombine)
MULTIMODAL_KINDS = tuple(k for k in TABLE_ORDER if k.is_multimodal)
TWO_BRANCH_KINDS = (FusionKind.CMAC, FusionKind.HSTEC, FusionKind.NativeCombine)


@dataclass
class FusionConfig:
    d_model: int = 64
    num_heads: int = 4
    num_classes: int = 3
    dropout: float = 0.1
    # OTE: concatenate the pooled features along the feature axis (one 2d-wide
    # token) instead of stacking them as a two-token sequence
    ote_literal_concat: bool = False

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FusionOutput:
    p: Tensor  # [B, K] fused probabilities
    logits: Tensor  # [B, K] the pre-softmax quantity p was computed from
    y: np.ndarray  # [B]
    p_T: Optional[Tensor] = None  # branch logits, two-branch heads only
    p_I: Optional[Tensor] = None
    attn: Optional[dict] = None


class FusionModel(Module):
    """Parameters of one fusion head; only what ``kind`` actually uses is created."""

    def __init__(self, kind: FusionKind, config: FusionConfig, text_dim: int, image_dim: int,
                 rng: np.random.Generator):
        self.kind = kind
        self.config = config
        d, h, K, p = config.d_model, config.num_heads, config.num_classes, config.dropout
        if kind.uses_text:
            self.proj_ft = Linear(text_dim, d, rng)
        if kind.uses_image:
            self.proj_fi = Linear(image_dim, d, rng)
        if kind in (FusionKind.CMAC, FusionKind.HSTEC):
            self.proj_ht = Linear(text_dim, d, rng)
            self.proj_hi = Linear(image_dim, d, rng)

        if kind is FusionKind.CMAC:
            self.attn_i2t = AttentionParams(d, h, rng)
            self.attn_t2i = AttentionParams(d, h, rng)
            self.text_classifier = MLPClassifier(2 * d, d, K, rng, p)
            self.image_classifier = MLPClassifier(2 * d, d, K, rng, p)
        elif kind is FusionKind.HSTEC:
            self.encoder = TransformerEncoderLayer(d, h, rng, p)
            self.text_classifier = MLPClassifier(2 * d, d, K, rng, p)
            self.image_classifier = MLPClassifier(2 * d, d, K, rng, p)
        elif kind is FusionKind.OTE:
            width = 2 * d if config.ote_literal_concat else d
            self.encoder = TransformerEncoderLayer(width, h, rng, p)
            self.classifier = MLPClassifier(width, d, K, rng, p)
        elif kind is FusionKind.NativeCat:
            self.classifier = MLPClassifier(2 * d, d, K, rng, p)
        elif kind is FusionKind.NativeCombine:
            self.text_classifier = MLPClassifier(d, d, K, rng, p)
            self.image_classifier = MLPClassifier(d, d, K, rng, p)
        else:
            self.classifier = MLPClassifier(d, d, K, rng, p)

    def projections(self) -> list[Linear]:
        return [m for m in (getattr(self, n, None) for n in ("proj_ft", "proj_fi", "proj_ht", "proj_hi"))
                if m is not None]

    def set_identity_projections(self) -> None:
        """Make every projection an identity map (needs equal input and model dims)."""
        for proj in self.projections():
            if proj.w.shape[0] != proj.w.shape[1]:
                raise ShapeMismatchError(f"identity projection needs a square map, got {proj.w.shape}")
            proj.w.data = np.eye(proj.w.shape[0])
            proj.b.data = np.zeros(proj.w.shape[1])

    def classifiers(self) -> list[MLPClassifier]:
        return [m for m in (getattr(self, n, None) for n in ("classifier", "text_classifier", "image_classifier"))
                if m is not None]

    def zero_classifiers(self) -> None:
        for clf in self.classifiers():
            clf.zero_()

    def __call__(self, enc_t: Optional[EncodedText], enc_i: Optional[EncodedImage],
                 training: bool = False, rng: Optional[np.random.Generator] = None) -> FusionOutput:
        return fusion_forward(enc_t, enc_i, self, training, rng)


# ----------------------------------------------------------------------------
# shared pieces


def fuse_probabilities(p_T, p_I) -> Tensor:
    """``softmax(p_T + p_I)`` along the class axis."""
    p_T, p_I = as_tensor(p_T), as_tensor(p_I)
    if p_T.shape != p_I.shape:
        raise ShapeMismatchError(f"branch logits {p_T.shape} and {p_I.shape} differ")
    return ops.softmax(ops.add(p_T, p_I), dim=-1)


def predict_label(p) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    p = p.data if isinstance(p, Tensor) else np.asarray(p)
    if p.ndim != 2 or p.shape[1] == 0:
        raise EmptyClassAxisError(f"need a non-empty class axis, got shape {p.shape}")
    return np.argmax(p, axis=1)


def project_common(enc_t: Optional[EncodedText], enc_i: Optional[EncodedImage], model: FusionModel):
    """Map every representation the head uses to ``d_model``; unused ones come back as None."""
    def apply(name, x):
        proj = getattr(model, name, None)
        if proj is None or x is None:
            return None
        if x.shape[-1] != proj.w.shape[0]:
            raise ShapeMismatchError(f"{name}: feature dim {x.shape[-1]} != {proj.w.shape[0]}")
        return proj(x)

    return (apply("proj_ht", enc_t.H if enc_t is not None else None),
            apply("proj_ft", enc_t.F if enc_t is not None else None),
            apply("proj_hi", enc_i.H if enc_i is not None else None),
            apply("proj_fi", enc_i.F if enc_i is not None else None))


def _check_kind(model, *kinds):
    if model.kind not in kinds:
        raise KindMismatchError(f"model of kind {model.kind.value} passed to the "
                                f"{'/'.join(k.value for k in kinds)} forward")


def _check_batch(enc_t, enc_i):
    if enc_t is not None and enc_i is not None and enc_t.F.shape[0] != enc_i.F.shape[0]:
        raise ShapeMismatchError(f"text batch {enc_t.F.shape[0]} != image batch {enc_i.F.shape[0]}")


def _two_branch(p_T, p_I, attn=None) -> FusionOutput:
    logits = ops.add(p_T, p_I)
    p = ops.softmax(logits, dim=-1)
    return FusionOutput(p=p, logits=logits, y=predict_label(p), p_T=p_T, p_I=p_I, attn=attn)


def _single(logits, attn=None) -> FusionOutput:
    p = ops.softmax(logits, dim=-1)
    return FusionOutput(p=p, logits=logits, y=predict_label(p), attn=attn)


# ----------------------------------------------------------------------------
# heads


def cmac_forward(enc_t, enc_i, model: FusionModel, training=False, rng=None) -> FusionOutput:
    """Bidirectional cross-modal attention feeding two classifiers."""
    _check_kind(model, FusionKind.CMAC)
    _check_batch(enc_t, enc_i)
    H_t, F_t, H_i, F_i = project_common(enc_t, enc_i, model)
    # image queries over text keys/values; padded text keys masked
    A_i2t, w_i2t = multi_head_attention(H_i, H_t, model.attn_i2t, key_mask=enc_t.mask)
    A_t2i, w_t2i = multi_head_attention(H_t, H_i, model.attn_t2i)
    a_i2t = ops.mean_reduce(A_i2t, dim=1, squeeze=True)
    a_t2i = ops.masked_mean(A_t2i, enc_t.mask, dim=1)
    model.train(training)
    p_T = model.text_classifier(ops.concat([F_t, a_i2t], dim=1), rng)
    p_I = model.image_classifier(ops.concat([F_i, a_t2i], dim=1), rng)
    return _two_branch(p_T, p_I, attn={"image_to_text": w_i2t, "text_to_image": w_t2i})


def hstec_forward(enc_t, enc_i, model: FusionModel, training=False, rng=None) -> FusionOutput:
    """Self-attention over the joined text and image hidden-state sequence."""
    _check_kind(model, FusionKind.HSTEC)
    _check_batch(enc_t, enc_i)
    H_t, F_t, H_i, F_i = project_common(enc_t, enc_i, model)
    H_cat = ops.concat([H_t, H_i], dim=1)
    mask = np.concatenate([enc_t.mask, np.ones(H_i.shape[:2], dtype=bool)], axis=1)
    model.train(training)
    A, weights = model.encoder(H_cat, mask=mask, rng=rng, return_weights=True)
    a = ops.masked_mean(A, mask, dim=1)
    p_T = model.text_classifier(ops.concat([F_t, a], dim=1), rng)
    p_I = model.image_classifier(ops.concat([F_i, a], dim=1), rng)
    return _two_branch(p_T, p_I, attn={"self": weights})


def ote_forward(enc_t, enc_i, model: FusionModel, training=False, rng=None) -> FusionOutput:
    """Encoder layer over the pooled features, image token first."""
    _check_kind(model, FusionKind.OTE)
    _check_batch(enc_t, enc_i)
    _, F_t, _, F_i = project_common(enc_t, enc_i, model)
    B, d = F_t.shape
    tok_i = ops.reshape(F_i, (B, 1, d))
    tok_t = ops.reshape(F_t, (B, 1, d))
    if model.config.ote_literal_concat:
        F_cat = ops.concat([tok_i, tok_t], dim=2)  # [B, 1, 2d]
    else:
        F_cat = ops.concat([tok_i, tok_t], dim=1)  # [B, 2, d]
    model.train(training)
    F_attn, weights = model.encoder(F_cat, rng=rng, return_weights=True)
    logits = model.classifier(ops.mean_reduce(F_attn, dim=1, squeeze=True), rng)
    return _single(logits, attn={"self": weights})


def native_cat_forward(enc_t, enc_i, model: FusionModel, training=False, rng=None) -> FusionOutput:
    _check_kind(model, FusionKind.NativeCat)
    _check_batch(enc_t, enc_i)
    _, F_t, _, F_i = project_common(enc_t, enc_i, model)
    model.train(training)
    return _single(model.classifier(ops.concat([F_t, F_i], dim=1), rng))


def native_combine_forward(enc_t, enc_i, model: FusionModel, training=False, rng=None) -> FusionOutput:
    _check_kind(model, FusionKind.NativeCombine)
    _check_batch(enc_t, enc_i)
    _, F_t, _, F_i = project_common(enc_t, enc_i, model)
    model.train(training)
    return _two_branch(model.text_classifier(F_t, rng), model.image_classifier(F_i, rng))


def unimodal_forward(kind: FusionKind, enc, model: FusionModel, training=False, rng=None) -> FusionOutput:
    """Classifier over one modality's pooled feature."""
    if kind not in (FusionKind.TextOnly, FusionKind.ImageOnly) or model.kind is not kind:
        raise KindMismatchError(f"unimodal forward called with kind {kind.value} on a {model.kind.value} model")
    expected = EncodedText if kind is FusionKind.TextOnly else EncodedImage
    if not isinstance(enc, expected):
        raise KindMismatchError(f"{kind.value} needs an {expected.__name__}")
    if kind is FusionKind.TextOnly:
        _, F, _, _ = project_common(enc, None, model)
    else:
        _, _, _, F = project_common(None, enc, model)
    model.train(training)
    return _single(model.classifier(F, rng))


_FORWARDS = {
    FusionKind.CMAC: cmac_forward,
    FusionKind.HSTEC: hstec_forward,
    FusionKind.OTE: ote_forward,
    FusionKind.NativeCat: native_cat_forward,
    FusionKind.NativeCombine: native_combine_forward,
}


def fusion_forward(enc_t, enc_i, model: FusionModel, training=False, rng=None) -> FusionOutput:
    """Dispatch on ``model.kind``."""
    if model.kind is FusionKind.TextOnly:
        return unimodal_forward(model.kind, enc_t, model, training, rng)
    if model.kind is FusionKind.ImageOnly:
        return unimodal_forward(model.kind, enc_i, model, training, rng)
    return _FORWARDS[model.kind](enc_t, enc_i, model, training, rng)
