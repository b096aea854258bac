"""Checkpoint persistence.

Layout, all integers 32-bit little-endian::

    b"TLBD" | version (=1) | layer count | layer widths...
    | per layer: weights (out x in, row-major f32), bias (f32)
    | metadata length | metadata (UTF-8 JSON)

Weights are stored in 32-bit and widened to 64-bit on load.
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import structlog

from triggerless.core.exceptions import (
    BadMagicError,
    CheckpointFormatError,
    ShapeMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from triggerless.models.network import Parameters
from triggerless.schemas.model import ModelSpec
from triggerless.utils.files import PathLike, atomic_write_bytes, read_bytes

logger = structlog.get_logger(__name__)

MAGIC = b"TLBD"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_checkpoint(params: Parameters, spec: ModelSpec, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    if params.layer_widths != spec.layer_widths:
        raise ShapeMismatchError(
            f"parameters {params.layer_widths} do not match spec {spec.layer_widths}"
        )
    widths = spec.layer_widths
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(widths))]
    parts += [_U32.pack(w) for w in widths]
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    doc = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [_U32.pack(len(doc)), doc]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated while reading {what} (need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(data: bytes) -> Tuple[Parameters, ModelSpec, Dict[str, Any]]:
    reader = _Reader(data)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")

    count = reader.u32("layer count")
    if count < 3:
        raise ShapeMismatchError(f"checkpoint declares {count} layer widths, need at least 3")
    widths = [reader.u32(f"layer width {i}") for i in range(count)]
    if any(w < 1 for w in widths):
        raise ShapeMismatchError(f"checkpoint declares empty layer in {widths}")
    spec = ModelSpec(layer_widths=widths)

    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        raw_w = reader.take(4 * fan_in * fan_out, f"weights of layer {i}")
        raw_b = reader.take(4 * fan_out, f"bias of layer {i}")
        weights.append(np.frombuffer(raw_w, dtype="<f4").astype(np.float64).reshape(fan_out, fan_in))
        biases.append(np.frombuffer(raw_b, dtype="<f4").astype(np.float64))

    length = reader.u32("metadata length")
    doc = reader.take(length, "metadata")
    if reader.pos != len(data):
        raise ShapeMismatchError(
            f"{len(data) - reader.pos} trailing bytes after metadata; widths {widths} disagree with payload"
        )
    try:
        metadata = json.loads(doc.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"checkpoint metadata is not valid JSON: {e}") from e

    return Parameters(weights=tuple(weights), biases=tuple(biases)), spec, metadata


def save_checkpoint(path: PathLike, params: Parameters, spec: ModelSpec, metadata: Optional[Dict[str, Any]] = None) -> Path:
    written = atomic_write_bytes(path, encode_checkpoint(params, spec, metadata))
    logger.info("checkpoint_saved", path=str(written), layer_widths=spec.layer_widths)
    return written


def load_checkpoint(path: PathLike) -> Tuple[Parameters, ModelSpec, Dict[str, Any]]:
    return decode_checkpoint(read_bytes(path))
