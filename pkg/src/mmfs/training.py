"""Training loop, evaluation and the seven-model comparison."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff.module import Module
from .autodiff.nn import cross_entropy_loss
from .autodiff.optim import adam_step
from .autodiff.tensor import GradTape, backward
from .config import RunConfig, TrainConfig
from .data import Batch, SplitDataset, make_batches
from .exceptions import EmptySplitError, NonFiniteLossError
from .fusion import TABLE_ORDER, FusionConfig, FusionKind, FusionModel, FusionOutput
from .image import ImageEncoder, ImageEncoderConfig
from .metrics import ConfusionMatrix, MetricsReport, metrics_from_confusion
from .text import TextEncoder, TextEncoderConfig, Vocab, build_vocab

logger = logging.getLogger(__name__)


def trim_padding(ids, mask):
    """Drop trailing columns that are padding in every row.

    Padded keys are masked out of attention and padded queries never reach
    a pooled output, so the result is unchanged; only the work shrinks.
    """
    mask = np.asarray(mask, dtype=bool)
    used = np.flatnonzero(mask.any(axis=0))
    width = int(used[-1]) + 1 if used.size else 1
    return np.asarray(ids)[:, :width], mask[:, :width]


class ModelBundle(Module):
    """Encoders plus one fusion head; encoders a kind never reads are not built."""

    def __init__(self, kind: FusionKind, vocab: Vocab, text_config: TextEncoderConfig,
                 image_config: ImageEncoderConfig, fusion_config: FusionConfig, seed: int = 0):
        self.kind = kind
        self.vocab = vocab
        self.text_config = text_config
        self.image_config = image_config
        self.fusion_config = fusion_config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.text_encoder = TextEncoder(text_config, rng) if kind.uses_text else None
        self.image_encoder = ImageEncoder(image_config, rng) if kind.uses_image else None
        self.fusion = FusionModel(kind, fusion_config, text_config.embed_dim, image_config.feature_dim, rng)
        self._dropout_rng = np.random.default_rng([seed, 1])
        self._frozen = False

    @classmethod
    def from_run_config(cls, kind: FusionKind, vocab: Vocab, config: RunConfig, seed: Optional[int] = None):
        return cls(kind, vocab, config.text_config(len(vocab)), config.image_config(), config.fusion_config(),
                   config.seed if seed is None else seed)

    def encoder_parameters(self) -> list:
        out = []
        for enc in (self.text_encoder, self.image_encoder):
            if enc is not None:
                out.extend(enc.parameters())
        return out

    def freeze_encoders(self, frozen: bool = True) -> None:
        self._frozen = frozen
        for p in self.encoder_parameters():
            p.requires_grad = not frozen

    def trainable_parameters(self) -> list:
        return [p for p in self.parameters() if p.requires_grad]

    def forward(self, ids, mask, images, training: bool = False) -> FusionOutput:
        rng = self._dropout_rng
        ids, mask = trim_padding(ids, mask)
        # frozen encoders act as fixed feature extractors
        enc_training = training and not self._frozen
        enc_t = self.text_encoder(ids, mask, training=enc_training, rng=rng) if self.text_encoder else None
        enc_i = self.image_encoder(images, training=enc_training) if self.image_encoder else None
        return self.fusion(enc_t, enc_i, training=training, rng=rng)

    def forward_batch(self, batch: Batch, training: bool = False) -> FusionOutput:
        return self.forward(batch.ids, batch.mask, batch.images, training)


@dataclass
class TrainHistory:
    step_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return {"step_losses": [float(v) for v in self.step_losses],
                "epoch_losses": [float(v) for v in self.epoch_losses],
                "val_accuracy": [float(v) for v in self.val_accuracy],
                "best_epoch": self.best_epoch,
                "selection": "best validation accuracy, earliest epoch on ties"}


def _loss(out: FusionOutput, labels, aux: bool):
    loss = cross_entropy_loss(out.logits, labels)
    if aux and out.p_T is not None:
        loss = loss + cross_entropy_loss(out.p_T, labels) + cross_entropy_loss(out.p_I, labels)
    return loss


def train(bundle: ModelBundle, dataset: SplitDataset, config: TrainConfig):
    """Adam on cross-entropy of the fused logits; keeps the best-validation epoch.

    Returns ``(best_state, history)`` and leaves ``bundle`` holding
    ``best_state``.
    """
    if not dataset.train:
        raise EmptySplitError("training split is empty")
    if not dataset.val:
        raise EmptySplitError("validation split is empty")
    bundle.freeze_encoders(config.freeze_encoders)
    params = bundle.trainable_parameters()
    history = TrainHistory()
    best_acc, best_state = -1.0, None
    step = 0
    for epoch in range(config.epochs):
        losses = []
        for batch in make_batches(dataset.train, bundle.vocab, config.batch_size, config.max_seq_len,
                                  shuffle_seed=[config.seed, epoch]):
            with GradTape() as tape:
                out = bundle.forward_batch(batch, training=True)
                loss = _loss(out, batch.labels, config.aux_branch_loss)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLossError(step, value)
            backward(loss, tape)
            adam_step(params, config.learning_rate, weight_decay=config.weight_decay)
            losses.append(value)
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                break
        history.step_losses.extend(losses)
        history.epoch_losses.append(float(np.mean(losses)))
        acc = evaluate(bundle, dataset.val, config.batch_size).accuracy
        history.val_accuracy.append(acc)
        logger.info("%s epoch %d loss %.4f val acc %.4f", bundle.kind.value, epoch, history.epoch_losses[-1], acc)
        if acc > best_acc:
            best_acc, best_state, history.best_epoch = acc, bundle.state_dict(), epoch
        if config.max_steps is not None and step >= config.max_steps:
            break
    bundle.load_state_dict(best_state)
    return best_state, history


def predict(bundle: ModelBundle, samples: Sequence, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode ``(probabilities [N, K], labels [N])`` in sample order."""
    if not samples:
        raise EmptySplitError("nothing to predict")
    probs, labels = [], []
    for batch in make_batches(samples, bundle.vocab, batch_size, bundle.text_config.max_seq_len):
        out = bundle.forward_batch(batch, training=False)
        probs.append(out.p.data)
        labels.append(out.y)
    return np.concatenate(probs), np.concatenate(labels)


def evaluate(bundle: ModelBundle, samples: Sequence, batch_size: int = 64) -> MetricsReport:
    if not samples:
        raise EmptySplitError("cannot evaluate an empty split")
    K = bundle.fusion_config.num_classes
    cm = ConfusionMatrix(np.zeros((K, K), dtype=np.int64))
    for batch in make_batches(samples, bundle.vocab, batch_size, bundle.text_config.max_seq_len):
        out = bundle.forward_batch(batch, training=False)
        cm = cm + ConfusionMatrix.from_predictions(batch.labels, out.y, K)
    return metrics_from_confusion(cm)


# ----------------------------------------------------------------------------
# comparison


@dataclass
class ModelResult:
    kind: FusionKind
    val: MetricsReport
    test: MetricsReport
    history: TrainHistory
    wall_time: float = 0.0


@dataclass
class ExperimentReport:
    results: list
    seed: int
    config: dict

    def __getitem__(self, kind: FusionKind) -> ModelResult:
        for r in self.results:
            if r.kind is kind:
                return r
        raise KeyError(kind)

    def to_dict(self, include_timing: bool = False) -> dict:
        models = []
        for r in self.results:
            entry = {"model": r.kind.table_name, "kind": r.kind.value, "val": r.val.to_dict(),
                     "test": r.test.to_dict(), "history": r.history.to_dict()}
            if include_timing:
                entry["wall_time_s"] = r.wall_time
            models.append(entry)
        return {"seed": self.seed, "config": self.config, "average": "macro", "models": models}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["Model", "Acc/%", "Pre/% (macro)", "Recall/% (macro)", "F1 score/% (macro)"])
        for r in self.results:
            t = r.test
            writer.writerow([r.kind.table_name] + [f"{100 * v:.2f}" for v in
                                                   (t.accuracy, t.macro_precision, t.macro_recall, t.macro_f1)])
        return buf.getvalue()


def compare_experiment(dataset: SplitDataset, config: RunConfig,
                       kinds: Sequence[FusionKind] = TABLE_ORDER, vocab: Optional[Vocab] = None) -> ExperimentReport:
    """Train every kind from a fresh initialization (seed offset by table row) and test it."""
    if vocab is None:
        vocab = build_vocab([s.text for s in dataset.train])
    results = []
    for kind in kinds:
        offset = TABLE_ORDER.index(kind)
        start = time.perf_counter()
        bundle = ModelBundle.from_run_config(kind, vocab, config, seed=config.seed + offset)
        tcfg = config.train_config()
        tcfg.seed = config.seed + offset
        _, history = train(bundle, dataset, tcfg)
        val = evaluate(bundle, dataset.val, tcfg.batch_size)
        test = evaluate(bundle, dataset.test, tcfg.batch_size)
        elapsed = time.perf_counter() - start
        logger.info("%s test acc %.4f (%.1fs)", kind.table_name, test.accuracy, elapsed)
        results.append(ModelResult(kind, val, test, history, elapsed))
    return ExperimentReport(results, config.seed, config.to_dict())
