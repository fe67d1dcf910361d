"""scikit-learn compatible wrapper around one fusion model."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import resolve_config
from .data import LABEL_TO_ID, LABELS, Sample, split_dataset
from .fusion import FusionKind
from .text import build_vocab
from .training import ModelBundle, predict, train


def check_multimodal_X(X, image_size=None) -> tuple[list[str], np.ndarray]:
    """Validate ``X`` as a sequence of ``(text, image [3, H, W])`` pairs.

    Returns the texts and the stacked images as float64.
    """
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError("X must be a sequence of (text, image) pairs")
    if len(X) == 0:
        raise ValueError("X is empty")
    texts, images = [], []
    for n, item in enumerate(X):
        if not isinstance(item, (tuple, list)) or len(item) != 2:
            raise ValueError(f"X[{n}] is not a (text, image) pair")
        text, image = item
        if not isinstance(text, str):
            raise TypeError(f"X[{n}]: text must be a str, got {type(text).__name__}")
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[0] != 3 or image.shape[1] != image.shape[2]:
            raise ValueError(f"X[{n}]: image must have shape [3, S, S], got {image.shape}")
        if not np.isfinite(image).all():
            raise ValueError(f"X[{n}]: image contains non-finite values")
        texts.append(text)
        images.append(image)
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ValueError(f"images differ in shape: {sorted(shapes)}")
    stacked = np.stack(images)
    if image_size is not None and stacked.shape[-1] != image_size:
        raise ValueError(f"images are {stacked.shape[-1]}px, model expects {image_size}px")
    return texts, stacked


def check_labels(y, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map label names or ids to ids; returns ``(ids, classes_)``."""
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"y must be 1-D with {n} entries, got shape {y.shape}")
    if y.dtype.kind in "US":
        unknown = sorted(set(y.tolist()) - set(LABELS))
        if unknown:
            raise ValueError(f"unknown labels {unknown}; expected {list(LABELS)}")
        return np.array([LABEL_TO_ID[v] for v in y.tolist()], dtype=np.int64), np.array(LABELS)
    if y.dtype.kind not in "iu" or y.min() < 0 or y.max() >= len(LABELS):
        raise ValueError(f"integer labels must lie in [0, {len(LABELS)})")
    return y.astype(np.int64), np.arange(len(LABELS))


class MultimodalSentimentClassifier(ClassifierMixin, BaseEstimator):
    """Train one fusion kind on ``(text, image)`` pairs.

    ``X`` is a sequence of ``(text, image)`` pairs where each image is a
    standardized ``[3, S, S]`` array; ``y`` holds label names
    (``"positive"``, ``"negative"``, ``"neutral"``) or ids 0..2. A seeded
    ``validation_fraction`` of the training data drives epoch selection.
    """

    def __init__(self, kind="OTE", profile="desk", learning_rate=None, epochs=None, batch_size=None,
                 freeze_encoders=False, validation_fraction=0.125, seed=0):
        self.kind = kind
        self.profile = profile
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.freeze_encoders = freeze_encoders
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _run_config(self):
        return resolve_config(self.profile, overrides={
            "learning_rate": self.learning_rate, "epoch": self.epochs, "batch_size": self.batch_size,
            "freeze_encoders": self.freeze_encoders, "seed": self.seed})

    def fit(self, X, y):
        kind = FusionKind.parse(self.kind) if isinstance(self.kind, str) else FusionKind(self.kind)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie strictly between 0 and 1")
        config = self._run_config()
        texts, images = check_multimodal_X(X, config.image_size)
        ids, self.classes_ = check_labels(y, len(texts))
        samples = [Sample(str(n), t, im, int(lab)) for n, (t, im, lab) in enumerate(zip(texts, images, ids))]
        n_val = max(1, int(round(len(samples) * self.validation_fraction)))
        if n_val >= len(samples):
            raise ValueError("need at least two samples to hold out a validation set")
        dataset = split_dataset(samples, (len(samples) - n_val, n_val, 0), seed=self.seed)
        vocab = build_vocab([s.text for s in dataset.train])
        self.bundle_ = ModelBundle.from_run_config(kind, vocab, config, seed=self.seed)
        _, self.history_ = train(self.bundle_, dataset, config.train_config())
        self.n_features_in_ = 2
        return self

    def _samples(self, X):
        check_is_fitted(self, "bundle_")
        texts, images = check_multimodal_X(X, self.bundle_.image_config.image_size)
        return [Sample(str(n), t, im, 0) for n, (t, im) in enumerate(zip(texts, images))]

    def predict_proba(self, X) -> np.ndarray:
        samples = self._samples(X)
        return predict(self.bundle_, samples)[0]

    def predict(self, X) -> np.ndarray:
        samples = self._samples(X)
        return self.classes_[predict(self.bundle_, samples)[1]]
