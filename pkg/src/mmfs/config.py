"""Run configuration: profile defaults < JSON config file < command-line flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .exceptions import ConfigError
from .fusion import FusionConfig
from .image import ImageEncoderConfig
from .text import TextEncoderConfig

PROFILES = {
    "desk": {
        "bert_embedding": 64,
        "num_header": 4,
        "bert_dropout": 0.1,
        "num_layers": 2,
        "max_seq_len": 32,
        "image_size": 32,
        "stem_channels": 8,
        "stages": [[1, 8, 2], [1, 16, 2], [1, 32, 2]],
        "block": "basic",
        "fusion_dim": 64,
        "fusion_heads": 4,
        "batch_size": 16,
        "learning_rate": 1e-3,
        "epoch": 10,
        "weight_decay": 0.0,
    },
    "paper": {
        "bert_embedding": 768,
        "num_header": 12,
        "bert_dropout": 0.1,
        "num_layers": 12,
        "max_seq_len": 128,
        "image_size": 224,
        "stem_channels": 64,
        "stages": [[3, 256, 1], [4, 512, 2], [6, 1024, 2], [3, 2048, 2]],
        "block": "bottleneck",
        "fusion_dim": 768,
        "fusion_heads": 12,
        "batch_size": 16,
        "learning_rate": 3e-5,
        "epoch": 20,
        "weight_decay": 0.0,
    },
}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 10
    weight_decay: float = 0.0
    dropout: float = 0.1
    seed: int = 0
    profile: str = "desk"
    freeze_encoders: bool = False
    aux_branch_loss: bool = False
    max_steps: Optional[int] = None
    max_seq_len: int = 32

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        return cls(**{**dict(learning_rate=3e-5, batch_size=16, epochs=20, weight_decay=0.0,
                             dropout=0.1, profile="paper", max_seq_len=128), **overrides})


@dataclass
class RunConfig:
    """Every tunable of a run; the JSON config file uses these field names as keys."""

    profile: str = "desk"
    bert_embedding: int = 64
    num_header: int = 4
    bert_dropout: float = 0.1
    num_layers: int = 2
    max_seq_len: int = 32
    image_size: int = 32
    stem_channels: int = 8
    stages: list = field(default_factory=lambda: [[1, 8, 2], [1, 16, 2], [1, 32, 2]])
    block: str = "basic"
    fusion_dim: int = 64
    fusion_heads: int = 4
    batch_size: int = 16
    learning_rate: float = 1e-3
    epoch: int = 10
    weight_decay: float = 0.0
    seed: int = 0
    freeze_encoders: bool = False
    aux_branch_loss: bool = False
    ote_literal_concat: bool = False
    pooling: str = "cls"
    max_steps: Optional[int] = None
    split: Optional[list] = None
    split_seed: Optional[int] = None
    data_dir: Optional[str] = None

    @classmethod
    def from_profile(cls, profile: str) -> "RunConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        return cls(profile=profile, **PROFILES[profile])

    def text_config(self, vocab_size: int) -> TextEncoderConfig:
        return TextEncoderConfig(vocab_size=vocab_size, embed_dim=self.bert_embedding, num_heads=self.num_header,
                                 num_layers=self.num_layers, max_seq_len=self.max_seq_len,
                                 dropout=self.bert_dropout, pooling=self.pooling)

    def image_config(self) -> ImageEncoderConfig:
        return ImageEncoderConfig(image_size=self.image_size, stem_channels=self.stem_channels,
                                  stages=self.stages, block=self.block)

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(d_model=self.fusion_dim, num_heads=self.fusion_heads, num_classes=3,
                            dropout=self.bert_dropout, ote_literal_concat=self.ote_literal_concat)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epoch,
                           weight_decay=self.weight_decay, dropout=self.bert_dropout, seed=self.seed,
                           profile=self.profile, freeze_encoders=self.freeze_encoders,
                           aux_branch_loss=self.aux_branch_loss, max_steps=self.max_steps,
                           max_seq_len=self.max_seq_len)

    def to_dict(self) -> dict:
        return asdict(self)


_INT_KEYS = {"bert_embedding", "num_header", "num_layers", "max_seq_len", "image_size", "stem_channels",
             "fusion_dim", "fusion_heads", "batch_size", "epoch", "seed", "max_steps", "split_seed"}
_POSITIVE = _INT_KEYS - {"seed", "split_seed"}
_FLOAT_KEYS = {"bert_dropout", "learning_rate", "weight_decay"}
_BOOL_KEYS = {"freeze_encoders", "aux_branch_loss", "ote_literal_concat"}
_STR_KEYS = {"profile", "block", "pooling", "data_dir"}
_NULLABLE = {"max_steps", "split", "split_seed", "data_dir"}
_KNOWN = {f.name for f in fields(RunConfig)}


def _check_value(key: str, value):
    if key not in _KNOWN:
        raise ConfigError(f"unknown config key {key!r}")
    if value is None:
        if key not in _NULLABLE:
            raise ConfigError(f"{key}: null is not allowed")
        return None
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        if key in _POSITIVE and value < 1:
            raise ConfigError(f"{key}: must be positive, got {value}")
    elif key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        value = float(value)
        if value < 0 or (key == "bert_dropout" and value >= 1):
            raise ConfigError(f"{key}: out of range: {value}")
    elif key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
    elif key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
    elif key == "stages":
        if not isinstance(value, list) or not value or not all(
                isinstance(s, list) and len(s) == 3 and all(isinstance(v, int) for v in s) for s in value):
            raise ConfigError(f"stages: expected a list of [blocks, channels, stride], got {value!r}")
        for i, s in enumerate(value):
            if s[0] < 1 or s[1] < 1 or s[2] not in (1, 2):
                raise ConfigError(f"stages[{i}]: invalid stage {s}")
    elif key == "split":
        if not isinstance(value, list) or len(value) != 3 or not all(
                isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in value):
            raise ConfigError(f"split: expected three non-negative integers, got {value!r}")
    return value


def resolve_config(profile: str = "desk", path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Start from ``profile``, apply the JSON file at ``path``, then ``overrides``.

    A ``profile`` key inside the file selects the base profile when no
    explicit profile override is given.
    """
    file_values = {}
    if path is not None:
        try:
            file_values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc.msg})") from None
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path}: expected a JSON object")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    base = overrides.get("profile", file_values.get("profile", profile))
    cfg = RunConfig.from_profile(base)
    for source in (file_values, overrides):
        for key, value in source.items():
            setattr(cfg, key, _check_value(key, value))
    if cfg.bert_embedding % cfg.num_header:
        raise ConfigError(f"bert_embedding {cfg.bert_embedding} not divisible by num_header {cfg.num_header}")
    if cfg.fusion_dim % cfg.fusion_heads:
        raise ConfigError(f"fusion_dim {cfg.fusion_dim} not divisible by fusion_heads {cfg.fusion_heads}")
    if cfg.pooling not in ("cls", "mean"):
        raise ConfigError(f"pooling: expected 'cls' or 'mean', got {cfg.pooling!r}")
    if cfg.block not in ("basic", "bottleneck"):
        raise ConfigError(f"block: expected 'basic' or 'bottleneck', got {cfg.block!r}")
    return cfg
