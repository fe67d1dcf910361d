"""Miniature BERT-style text encoder with MLM and NSP heads."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .autodiff import ops
from .autodiff.module import Module
from .autodiff.nn import Embedding, Linear, TransformerEncoderLayer, dropout, linear
from .autodiff.tensor import Tensor
from .exceptions import EmptyCorpusError, IndexOutOfRangeError, NoMaskableTokensError, ShapeMismatchError

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
NUM_SPECIAL = len(SPECIAL_TOKENS)

_WORD = re.compile(r"[^\W_]+")


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _WORD.findall(text.lower())


class Vocab:
    """Token <-> id map with the five reserved ids first."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIAL_TOKENS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, text: str) -> list[int]:
        return [self.id(w) for w in split_words(text)]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.itos[i] for i in ids if i >= NUM_SPECIAL)

    @property
    def words(self) -> list[str]:
        return self.itos[NUM_SPECIAL:]

    def save(self, path) -> None:
        """One non-reserved token per line; line ``n`` holds id ``n + 5``."""
        Path(path).write_text("".join(f"{t}\n" for t in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(line for line in text.split("\n") if line)


def build_vocab(corpus: Sequence[str], min_count: int = 1, max_size: Optional[int] = None) -> Vocab:
    """Frequency-ranked vocabulary; ties are broken lexicographically.

    ``max_size`` counts the reserved tokens.
    """
    if not corpus:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    counts = Counter(w for text in corpus for w in split_words(text))
    ranked = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    if max_size is not None:
        ranked = ranked[:max(0, max_size - NUM_SPECIAL)]
    return Vocab(ranked)


def tokenize(text: str, vocab: Vocab, max_seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """``[CLS] + tokens + [PAD]...`` of length ``max_seq_len`` and its validity mask."""
    if max_seq_len < 2:
        raise ValueError("max_seq_len must be at least 2")
    body = vocab.encode(text)[:max_seq_len - 1]
    ids = np.full(max_seq_len, PAD, dtype=np.int64)
    ids[0] = CLS
    ids[1:1 + len(body)] = body
    return ids, ids != PAD


@dataclass
class TextEncoderConfig:
    vocab_size: int
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    max_seq_len: int = 32
    dropout: float = 0.1
    pooling: str = "cls"

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be at least 2")
        if self.vocab_size < NUM_SPECIAL:
            raise ValueError(f"vocab_size must be at least {NUM_SPECIAL}")
        if self.pooling not in ("cls", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @classmethod
    def from_profile(cls, profile: str, vocab_size: int, **overrides) -> "TextEncoderConfig":
        presets = {
            "desk": dict(embed_dim=64, num_heads=4, num_layers=2, max_seq_len=32, dropout=0.1),
            # BERT-base sized
            "paper": dict(embed_dim=768, num_heads=12, num_layers=12, max_seq_len=128, dropout=0.1),
        }
        if profile not in presets:
            raise ValueError(f"unknown profile {profile!r}")
        return cls(vocab_size=vocab_size, **{**presets[profile], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


class EncodedText(NamedTuple):
    H: Tensor  # [B, S, d] hidden states
    F: Tensor  # [B, d] pooled feature
    mask: np.ndarray  # [B, S] true on real tokens


class TextEncoder(Module):
    def __init__(self, config: TextEncoderConfig, rng: np.random.Generator):
        d = config.embed_dim
        self.config = config
        self.token_embedding = Embedding(config.vocab_size, d, rng, scale=0.5)
        self.position_embedding = Embedding(config.max_seq_len, d, rng, scale=0.5)
        self.segment_embedding = Embedding(2, d, rng, scale=0.5)
        self.layers = [TransformerEncoderLayer(d, config.num_heads, rng, config.dropout)
                       for _ in range(config.num_layers)]
        self.pooler = Linear(d, d, rng)
        self.mlm_head = Linear(d, config.vocab_size, rng)
        self.nsp_head = Linear(2 * d, 1, rng)

    def __call__(self, ids, mask, training=False, rng=None, segment_ids=None) -> EncodedText:
        return encode_text(ids, mask, self, training=training, rng=rng, segment_ids=segment_ids)


def encode_text(ids, mask, encoder: TextEncoder, training: bool = False,
                rng: Optional[np.random.Generator] = None, segment_ids=None) -> EncodedText:
    """Token + position (+ segment) embeddings through the encoder stack.

    Pooled feature is ``tanh(pooler(H[:, 0]))`` (the CLS state), or the
    masked mean of ``H`` when the config asks for mean pooling.
    """
    ids = np.asarray(ids)
    mask = np.asarray(mask, dtype=bool)
    if ids.ndim != 2 or mask.shape != ids.shape:
        raise ShapeMismatchError(f"ids {ids.shape} and mask {mask.shape} must both be [B, S]")
    B, S = ids.shape
    cfg = encoder.config
    if S > cfg.max_seq_len:
        raise ShapeMismatchError(f"sequence length {S} exceeds max_seq_len {cfg.max_seq_len}")
    x = ops.add(encoder.token_embedding(ids), encoder.position_embedding(np.arange(S)))
    if segment_ids is not None:
        x = ops.add(x, encoder.segment_embedding(np.asarray(segment_ids)))
    x = dropout(x, cfg.dropout, training, rng)
    for layer in encoder.layers:
        layer.training = training
        x = layer(x, mask=mask, rng=rng)
    if cfg.pooling == "cls":
        pooled = ops.select(x, 1, 0)
    else:
        pooled = ops.masked_mean(x, mask, dim=1)
    return EncodedText(x, ops.tanh(encoder.pooler(pooled)), mask)


def mlm_mask(ids, mask, rng: np.random.Generator, vocab_size: int, mask_rate: float = 0.15):
    """BERT-style corruption for masked-token prediction.

    Each real, non-special token is selected with probability ``mask_rate``;
    if nothing is selected one eligible position is forced. Selected tokens
    become [MASK] 80% of the time, a random word 10%, unchanged 10%.

    Returns ``(corrupted_ids, positions [n, 2], targets [n])``.
    """
    ids = np.atleast_2d(np.asarray(ids))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    eligible = mask & (ids >= NUM_SPECIAL)
    if not eligible.any():
        raise NoMaskableTokensError("no maskable tokens in the batch")
    chosen = eligible & (rng.random(ids.shape) < mask_rate)
    if not chosen.any():
        flat = np.flatnonzero(eligible)
        chosen.reshape(-1)[flat[rng.integers(len(flat))]] = True
    positions = np.argwhere(chosen)
    targets = ids[chosen].copy()
    corrupted = ids.copy()
    roll = rng.random(len(positions))
    random_ids = rng.integers(NUM_SPECIAL, vocab_size, size=len(positions)) if vocab_size > NUM_SPECIAL \
        else targets
    for n, (b, s) in enumerate(positions):
        if roll[n] < 0.8:
            corrupted[b, s] = MASK
        elif roll[n] < 0.9:
            corrupted[b, s] = random_ids[n]
    return corrupted, positions, targets


def mlm_logits(H: Tensor, positions, encoder: TextEncoder) -> Tensor:
    """Vocabulary logits at the given ``(batch, seq)`` positions, shape ``[n, V]``."""
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    B, S, d = H.shape
    if positions.size and ((positions[:, 0] >= B).any() or (positions[:, 1] >= S).any()
                           or (positions < 0).any()):
        raise IndexOutOfRangeError(f"mask positions outside hidden states of shape {(B, S)}")
    rows = ops.take_rows(ops.reshape(H, (B * S, d)), positions[:, 0] * S + positions[:, 1])
    return encoder.mlm_head(rows)


def nsp_probability(F_A: Tensor, F_B: Tensor, encoder: TextEncoder) -> Tensor:
    """Probability that sentence B directly follows sentence A, shape ``[B]``."""
    if F_A.shape != F_B.shape:
        raise ShapeMismatchError(f"pooled features {F_A.shape} and {F_B.shape} differ")
    logit = linear(ops.concat([F_A, F_B], dim=1), encoder.nsp_head.w, encoder.nsp_head.b)
    return ops.reshape(ops.sigmoid(logit), (F_A.shape[0],))
