"""Manifests, PPM images, seeded splits, batching and the synthetic task."""
from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .exceptions import (
    BadMagicError,
    DuplicateIdError,
    EmptyDatasetError,
    InsufficientSamplesError,
    ManifestParseError,
    TruncatedPixelDataError,
    UnknownLabelError,
    UnsupportedMaxvalError,
)
from .text import Vocab, tokenize

LABELS = ("positive", "negative", "neutral")
LABEL_TO_ID = {name: i for i, name in enumerate(LABELS)}

# reference train/val/test sizes; default_counts scales them to any n
DEFAULT_SPLIT_COUNTS = (3200, 800, 512)


@dataclass
class Sample:
    id: str
    text: str
    image: np.ndarray  # [3, H, W], standardized
    label: int

    def __post_init__(self):
        if not 0 <= self.label < len(LABELS):
            raise UnknownLabelError(f"label id {self.label} out of range")


@dataclass
class ManifestRecord:
    id: str
    text: str
    image: str
    label: str


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self):
        return len(self.records)


def load_manifest(path) -> DatasetManifest:
    """Parse a JSON-lines manifest with keys ``id``, ``text``, ``image``, ``label``."""
    path = Path(path)
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(n, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ManifestParseError(n, "expected a JSON object")
            missing = [k for k in ("id", "text", "image", "label") if k not in obj]
            if missing:
                raise ManifestParseError(n, f"missing keys {missing}")
            if obj["label"] not in LABEL_TO_ID:
                raise UnknownLabelError(f"line {n}: unknown label {obj['label']!r} "
                                        f"(expected one of {', '.join(LABELS)})")
            rid = str(obj["id"])
            if rid in seen:
                raise DuplicateIdError(f"line {n}: duplicate id {rid!r}")
            seen.add(rid)
            records.append(ManifestRecord(rid, str(obj["text"]), str(obj["image"]), obj["label"]))
    return DatasetManifest(records, path.parent)


def write_manifest(records: Sequence[ManifestRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), ensure_ascii=False) + "\n")


# ----------------------------------------------------------------------------
# PPM


def _ppm_header(buf: bytes) -> tuple[list[int], int]:
    """Return the three header integers and the offset of the pixel data."""
    values, pos = [], 2
    while len(values) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise BadMagicError("malformed PPM header")
        values.append(int(buf[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return values, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    """Decode binary P6 data into a uint8 array ``[H, W, 3]``."""
    if buf[:2] != b"P6":
        raise BadMagicError(f"expected P6 magic, got {buf[:2]!r}")
    (width, height, maxval), offset = _ppm_header(buf)
    if maxval != 255:
        raise UnsupportedMaxvalError(f"only maxval 255 is supported, got {maxval}")
    need = width * height * 3
    raster = buf[offset:offset + need]
    if len(raster) < need:
        raise TruncatedPixelDataError(f"expected {need} pixel bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def resize_nearest(pixels: np.ndarray, size: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return pixels[rows][:, cols]


def standardize(x: np.ndarray) -> np.ndarray:
    """[0, 1] -> [-1, 1] per channel (mean 0.5, std 0.5)."""
    return (x - 0.5) / 0.5


def unstandardize(x: np.ndarray) -> np.ndarray:
    return x * 0.5 + 0.5


def load_image(path, size: int = 32) -> np.ndarray:
    """Read a P6 file, resize (nearest neighbour) and standardize to ``[3, size, size]``."""
    pixels = decode_ppm(Path(path).read_bytes())
    pixels = resize_nearest(pixels, size)
    return standardize(pixels.transpose(2, 0, 1).astype(np.float64) / 255.0)


def load_samples(manifest: DatasetManifest, image_size: int = 32) -> list[Sample]:
    return [Sample(r.id, r.text, load_image(manifest.root / r.image, image_size), LABEL_TO_ID[r.label])
            for r in manifest.records]


# ----------------------------------------------------------------------------
# splitting and batching


@dataclass
class SplitDataset:
    train: list
    val: list
    test: list
    seed: int = 0

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def default_counts(n: int) -> tuple[int, int, int]:
    """Scale the 3200/800/512 partition to ``n`` samples."""
    total = sum(DEFAULT_SPLIT_COUNTS)
    val = n * DEFAULT_SPLIT_COUNTS[1] // total
    test = n * DEFAULT_SPLIT_COUNTS[2] // total
    return n - val - test, val, test


def split_dataset(samples: Sequence, counts: Sequence[int], seed: int) -> SplitDataset:
    """Seeded shuffle, then contiguous train/val/test slices."""
    n_train, n_val, n_test = (int(c) for c in counts)
    if min(n_train, n_val, n_test) < 0 or n_train + n_val + n_test > len(samples):
        raise InsufficientSamplesError(f"counts {tuple(counts)} need more than the {len(samples)} samples given")
    order = np.random.default_rng(seed).permutation(len(samples))
    items = [samples[i] for i in order]
    return SplitDataset(items[:n_train], items[n_train:n_train + n_val],
                        items[n_train + n_val:n_train + n_val + n_test], seed)


@dataclass
class Batch:
    ids: np.ndarray  # [B, S] int
    mask: np.ndarray  # [B, S] bool
    images: np.ndarray  # [B, 3, H, W]
    labels: np.ndarray  # [B] int

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter((self.ids, self.mask, self.images, self.labels))


def make_batches(samples: Sequence[Sample], vocab: Vocab, batch_size: int, max_seq_len: int,
                 shuffle_seed: Optional[int] = None) -> Iterator[Batch]:
    """Fixed-length padded batches; the final partial batch is kept."""
    if not samples:
        raise EmptyDatasetError("no samples to batch")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = np.arange(len(samples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        toks = [tokenize(s.text, vocab, max_seq_len) for s in chunk]
        yield Batch(np.stack([t[0] for t in toks]), np.stack([t[1] for t in toks]),
                    np.stack([s.image for s in chunk]), np.array([s.label for s in chunk], dtype=np.int64))


# ----------------------------------------------------------------------------
# synthetic compositional task

DEFAULT_KEYWORDS = (
    ("sunny", "delight", "cheer"),
    ("gloomy", "dread", "awful"),
    ("ledger", "schedule", "memo"),
)
FILLER_WORDS = (
    "the a my this that today we you they just so really still again here there now then "
    "with from about after before over under around into out up down off very quite "
    "morning evening night week city street park river road train bus office room window "
    "picture photo view game team friend family people crowd coffee lunch dinner music "
    "book phone time day year"
).split()


@dataclass
class SyntheticSpec:
    """Label is ``(a + b) mod 3`` for text keyword class ``a`` and image colour class ``b``."""

    num_samples: int = 3000
    image_size: int = 32
    noise: float = 0.1
    keywords: tuple = DEFAULT_KEYWORDS
    min_filler: int = 3
    max_filler: int = 7
    seed: int = 0

    def __post_init__(self):
        self.keywords = tuple(tuple(k) for k in self.keywords)
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if len(self.keywords) != 3 or any(len(k) < 1 for k in self.keywords):
            raise ValueError("need keyword groups for exactly three text classes")
        if self.num_samples < 1 or self.image_size < 1:
            raise ValueError("num_samples and image_size must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["keywords"] = [list(k) for k in self.keywords]
        return d


def synthetic_label(a: int, b: int) -> int:
    return (a + b) % 3


def synthetic_pixels(b: int, size: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """uint8 ``[size, size, 3]``: channel ``b`` at 0.8, the others at 0.2, plus Gaussian noise."""
    base = np.full((size, size, 3), 0.2)
    base[..., b] = 0.8
    img = np.clip(base + rng.normal(0.0, noise, size=base.shape) if noise else base, 0.0, 1.0)
    return np.round(img * 255).astype(np.uint8)


def synthetic_text(a: int, spec: SyntheticSpec, rng: np.random.Generator) -> str:
    words = list(rng.choice(FILLER_WORDS, size=rng.integers(spec.min_filler, spec.max_filler + 1)))
    group = spec.keywords[a]
    words.insert(int(rng.integers(len(words) + 1)), group[int(rng.integers(len(group)))])
    return " ".join(words)


def generate_synthetic(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Write ``manifest.jsonl``, ``images/*.ppm`` and ``spec.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    width = len(str(spec.num_samples - 1))
    records = []
    for n in range(spec.num_samples):
        a, b = int(rng.integers(3)), int(rng.integers(3))
        sid = f"s{n:0{width}d}"
        rel = f"images/{sid}.ppm"
        (out / rel).write_bytes(encode_ppm(synthetic_pixels(b, spec.image_size, spec.noise, rng)))
        records.append(ManifestRecord(sid, synthetic_text(a, spec, rng), rel, LABELS[synthetic_label(a, b)]))
    write_manifest(records, out / "manifest.jsonl")
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return DatasetManifest(records, out)


def label_histogram(manifest: DatasetManifest) -> dict:
    counts = Counter(r.label for r in manifest.records)
    return {name: counts.get(name, 0) for name in LABELS}


def data_root(explicit=None) -> Optional[Path]:
    """``explicit`` if given, else ``$MMFS_DATA_ROOT``."""
    value = explicit if explicit is not None else os.environ.get("MMFS_DATA_ROOT")
    return Path(value) if value else None
