"""Text + image sentiment classification with transformer and residual-CNN
encoders, five fusion heads and a small numpy autodiff engine."""

__version__ = "0.1.0"

from .config import RunConfig, TrainConfig, resolve_config
from .data import SyntheticSpec, generate_synthetic, load_manifest, load_samples, split_dataset
from .fusion import FusionConfig, FusionKind, FusionModel, fusion_forward
from .image import ImageEncoder, ImageEncoderConfig, encode_image
from .metrics import ConfusionMatrix, MetricsReport, metrics_from_confusion
from .text import TextEncoder, TextEncoderConfig, Vocab, build_vocab, encode_text, tokenize
from .training import ModelBundle, compare_experiment, evaluate, predict, train
from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import MultimodalSentimentClassifier

__all__ = [
    "ConfusionMatrix", "FusionConfig", "FusionKind", "FusionModel", "ImageEncoder", "ImageEncoderConfig",
    "MetricsReport", "ModelBundle", "MultimodalSentimentClassifier", "RunConfig", "SyntheticSpec",
    "TextEncoder", "TextEncoderConfig", "TrainConfig", "Vocab", "build_vocab", "compare_experiment",
    "encode_image", "encode_text", "evaluate", "fusion_forward", "generate_synthetic", "load_checkpoint",
    "load_manifest", "load_samples", "metrics_from_confusion", "predict", "resolve_config",
    "save_checkpoint", "split_dataset", "tokenize", "train",
]
