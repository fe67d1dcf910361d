"""Binary checkpoint format plus a JSON sidecar describing the architecture.

Layout (all integers little-endian)::

    b"MMFS" | u32 version | u32 tensor count
    per tensor: u32 name length | name (UTF-8) | u32 rank | u64 dims[rank] | f32 values

Values are stored as 32-bit floats, so a reloaded model matches the saved one
to single precision.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import BadMagicError, ShapeMismatchError, TensorCountMismatchError, VersionMismatchError
from .fusion import FusionConfig, FusionKind
from .image import ImageEncoderConfig
from .text import TextEncoderConfig, Vocab

MAGIC = b"MMFS"
FORMAT_VERSION = 1


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_tensors(state: "OrderedDict[str, np.ndarray]") -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(state))]
    for name, value in state.items():
        raw = name.encode("utf-8")
        value = np.asarray(value)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(value.astype("<f4").tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    """Parse checkpoint bytes; a short read surfaces as a tensor-count mismatch."""
    if buf[:4] != MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {buf[:4]!r}")
    if len(buf) < 12:
        raise TensorCountMismatchError("checkpoint header is truncated")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    state: OrderedDict[str, np.ndarray] = OrderedDict()
    pos = 12
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + n > len(buf):
                raise struct.error("name runs past end of file")
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(buf):
                raise struct.error("values run past end of file")
            state[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 4 * size
    except struct.error:
        raise TensorCountMismatchError(f"header promises {count} tensors, file holds {len(state)} complete ones") from None
    if pos != len(buf):
        raise TensorCountMismatchError(f"{len(buf) - pos} trailing bytes after {count} tensors")
    return state


def bundle_metadata(bundle) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": bundle.kind.value,
        "seed": bundle.seed,
        "text_config": bundle.text_config.to_dict(),
        "image_config": bundle.image_config.to_dict(),
        "fusion_config": bundle.fusion_config.to_dict(),
        "vocab": bundle.vocab.words,
    }


def save_checkpoint(bundle, path, extra: Optional[dict] = None) -> None:
    """Write the tensors to ``path`` and the architecture to ``<path>.json``.

    ``extra`` is stored verbatim in the sidecar (e.g. how the data was split).
    """
    path = Path(path)
    meta = bundle_metadata(bundle)
    if extra:
        meta["extra"] = extra
    path.write_bytes(encode_tensors(bundle.state_dict()))
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_sidecar(path) -> dict:
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"sidecar format version {meta.get('format_version')}, expected {FORMAT_VERSION}")
    return meta


def load_checkpoint(path):
    """Rebuild the bundle described by the sidecar and fill it from the checkpoint."""
    from .training import ModelBundle

    path = Path(path)
    meta = read_sidecar(path)
    state = decode_tensors(path.read_bytes())
    bundle = ModelBundle(
        FusionKind.parse(meta["kind"]),
        Vocab(meta["vocab"]),
        TextEncoderConfig(**meta["text_config"]),
        ImageEncoderConfig(**meta["image_config"]),
        FusionConfig(**meta["fusion_config"]),
        seed=meta["seed"],
    )
    expected = bundle.state_dict()
    if len(state) != len(expected) or list(state) != list(expected):
        missing = sorted(set(expected) - set(state))
        raise TensorCountMismatchError(f"checkpoint has {len(state)} tensors, model needs {len(expected)}"
                                       + (f"; missing {missing[:3]}" if missing else ""))
    for name, value in state.items():
        if value.shape != expected[name].shape:
            raise ShapeMismatchError(f"{name}: checkpoint {value.shape} vs model {expected[name].shape}")
    bundle.load_state_dict(state)
    return bundle
