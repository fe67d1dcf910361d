"""Miniature residual network producing image hidden states and a pooled feature."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .autodiff import ops
from .autodiff.module import Module
from .autodiff.nn import BatchNorm2d, Conv2d, linear
from .autodiff.tensor import Tensor, as_tensor
from .exceptions import ShapeMismatchError


@dataclass
class ImageEncoderConfig:
    """``stages`` is a list of ``(num_blocks, channels, stride)``."""

    image_size: int = 32
    in_channels: int = 3
    stem_channels: int = 8
    stages: list = field(default_factory=lambda: [(1, 8, 2), (1, 16, 2), (1, 32, 2)])
    block: str = "basic"

    def __post_init__(self):
        self.stages = [tuple(int(v) for v in s) for s in self.stages]
        if not self.stages:
            raise ValueError("at least one stage is required")
        for n, c, s in self.stages:
            if n < 1 or c < 1 or s not in (1, 2):
                raise ValueError(f"invalid stage {(n, c, s)}: blocks and channels positive, stride 1 or 2")
        if self.block not in ("basic", "bottleneck"):
            raise ValueError(f"unknown block type {self.block!r}")
        if self.block == "bottleneck" and any(c % 4 for _, c, _ in self.stages):
            raise ValueError("bottleneck stages need channels divisible by 4")

    @property
    def feature_dim(self) -> int:
        return self.stages[-1][1]

    @property
    def output_size(self) -> int:
        size = self.image_size
        for _, _, stride in self.stages:
            size = (size + 2 * 1 - 3) // stride + 1
        return size

    @classmethod
    def from_profile(cls, profile: str, **overrides) -> "ImageEncoderConfig":
        presets = {
            "desk": dict(image_size=32, stem_channels=8, stages=[(1, 8, 2), (1, 16, 2), (1, 32, 2)]),
            # ResNet-50 stage layout
            "paper": dict(image_size=224, stem_channels=64, block="bottleneck",
                          stages=[(3, 256, 1), (4, 512, 2), (6, 1024, 2), (3, 2048, 2)]),
        }
        if profile not in presets:
            raise ValueError(f"unknown profile {profile!r}")
        return cls(**{**presets[profile], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d


class ResidualBlock(Module):
    """Two 3x3 conv/bn pairs plus a shortcut (1x1 conv + bn when the shape changes)."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.down_conv = Conv2d(c_in, c_out, 1, rng, stride=stride)
            self.down_bn = BatchNorm2d(c_out)
        else:
            self.down_conv = self.down_bn = None

    @property
    def has_downsample(self) -> bool:
        return self.down_conv is not None

    def residual(self, x, training):
        h = ops.relu(self.bn1(self.conv1(x)))
        return self.bn2(self.conv2(h))

    def zero_residual(self):
        """Zero the branch's final affine weights so it outputs exactly zero."""
        self.bn2.gamma.data[...] = 0.0
        self.bn2.beta.data[...] = 0.0

    def __call__(self, x, training=False) -> Tensor:
        return residual_block_forward(x, self, training)


class BottleneckBlock(ResidualBlock):
    """1x1 reduce -> 3x3 -> 1x1 expand, inner width ``c_out // 4``."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator):
        mid = c_out // 4
        self.conv1 = Conv2d(c_in, mid, 1, rng)
        self.bn1 = BatchNorm2d(mid)
        self.conv2 = Conv2d(mid, mid, 3, rng, stride=stride, padding=1)
        self.bn2 = BatchNorm2d(mid)
        self.conv3 = Conv2d(mid, c_out, 1, rng)
        self.bn3 = BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.down_conv = Conv2d(c_in, c_out, 1, rng, stride=stride)
            self.down_bn = BatchNorm2d(c_out)
        else:
            self.down_conv = self.down_bn = None

    def residual(self, x, training):
        h = ops.relu(self.bn1(self.conv1(x)))
        h = ops.relu(self.bn2(self.conv2(h)))
        return self.bn3(self.conv3(h))

    def zero_residual(self):
        self.bn3.gamma.data[...] = 0.0
        self.bn3.beta.data[...] = 0.0


def residual_block_forward(x, block: ResidualBlock, training: bool = False) -> Tensor:
    """``relu(F(x) + shortcut(x))``."""
    x = as_tensor(x)
    expected = block.conv1.w.shape[1]
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeMismatchError(f"residual block expects [B, {expected}, H, W], got {x.shape}")
    block.train(training)
    shortcut = block.down_bn(block.down_conv(x)) if block.has_downsample else x
    return ops.relu(ops.add(block.residual(x, training), shortcut))


class EncodedImage(NamedTuple):
    H: Tensor  # [B, S_I, d_I], spatial positions as a sequence
    F: Tensor  # [B, d_I], global average pool


class ImageEncoder(Module):
    def __init__(self, config: ImageEncoderConfig, rng: np.random.Generator):
        self.config = config
        self.stem_conv = Conv2d(config.in_channels, config.stem_channels, 3, rng, padding=1)
        self.stem_bn = BatchNorm2d(config.stem_channels)
        block_cls = BottleneckBlock if config.block == "bottleneck" else ResidualBlock
        blocks = []
        c_in = config.stem_channels
        for num_blocks, channels, stride in config.stages:
            for i in range(num_blocks):
                blocks.append(block_cls(c_in, channels, stride if i == 0 else 1, rng))
                c_in = channels
        self.blocks = blocks

    def __call__(self, images, training=False) -> EncodedImage:
        return encode_image(images, self, training)


def encode_image(images, encoder: ImageEncoder, training: bool = False) -> EncodedImage:
    """Stem, residual stages, then flatten the final map into ``H`` and average it into ``F``."""
    x = as_tensor(images)
    cfg = encoder.config
    want = (cfg.in_channels, cfg.image_size, cfg.image_size)
    if x.ndim != 4 or x.shape[1:] != want:
        raise ShapeMismatchError(f"image batch must be [B, {', '.join(map(str, want))}], got {x.shape}")
    encoder.train(training)
    x = ops.relu(encoder.stem_bn(encoder.stem_conv(x)))
    for block in encoder.blocks:
        x = residual_block_forward(x, block, training)
    B, C, H, W = x.shape
    hidden = ops.transpose(ops.reshape(x, (B, C, H * W)), (0, 2, 1))
    return EncodedImage(hidden, ops.mean_reduce(hidden, dim=1, squeeze=True))


def image_classifier_head(F: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Class probabilities ``softmax(F @ w + b)``."""
    return ops.softmax(linear(F, w, b), dim=-1)
