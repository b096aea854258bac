"""Datasets: MNIST IDX parsing, synthetic blobs, splits and seeded batching."""
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence, Tuple, Union

import numpy as np
import structlog

from triggerless.core.exceptions import (
    ContractViolation,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
)
from triggerless.utils.files import PathLike, atomic_write_text, read_bytes

logger = structlog.get_logger(__name__)

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049
_GZIP_MAGIC = b"\x1f\x8b"


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # samples x features, floats in [0, 1]
    labels: np.ndarray  # class indices
    num_classes: int

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ContractViolation(f"inputs must be 2-d, got shape {self.inputs.shape}")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractViolation(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractViolation(f"labels out of range for {self.num_classes} classes")
        self.inputs.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)


# ==================== MNIST IDX ====================

def _read_idx(path: PathLike) -> bytes:
    data = read_bytes(path)
    if data[:2] == _GZIP_MAGIC:
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as e:
            raise IdxTruncatedError(f"{path}: corrupt gzip stream ({e})") from e
    return data


def _header(data: bytes, path: PathLike, expected_magic: int, dims: int) -> Tuple[int, ...]:
    if len(data) < 4:
        raise IdxTruncatedError(f"{path}: header truncated ({len(data)} bytes)")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    size = 4 * (1 + dims)
    if len(data) < size:
        raise IdxTruncatedError(f"{path}: header truncated ({len(data)} bytes)")
    return struct.unpack(f">{dims}I", data[4:size])


def load_mnist_idx(images_path: PathLike, labels_path: PathLike) -> Dataset:
    """Parse a big-endian IDX image/label pair, optionally gzip-wrapped."""
    image_data = _read_idx(images_path)
    count, rows, cols = _header(image_data, images_path, MNIST_IMAGE_MAGIC, 3)
    expected = 16 + count * rows * cols
    if len(image_data) < expected:
        raise IdxTruncatedError(
            f"{images_path}: payload truncated ({len(image_data)} of {expected} bytes)"
        )

    label_data = _read_idx(labels_path)
    (label_count,) = _header(label_data, labels_path, MNIST_LABEL_MAGIC, 1)
    if len(label_data) < 8 + label_count:
        raise IdxTruncatedError(
            f"{labels_path}: payload truncated ({len(label_data)} of {8 + label_count} bytes)"
        )
    if label_count != count:
        raise IdxCountMismatchError(
            f"{count} images in {images_path} but {label_count} labels in {labels_path}"
        )

    pixels = np.frombuffer(image_data, dtype=np.uint8, count=count * rows * cols, offset=16)
    inputs = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(label_data, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    logger.info("mnist_loaded", path=str(images_path), samples=count, rows=rows, cols=cols)
    return Dataset(inputs, labels, num_classes=max(10, int(labels.max()) + 1) if count else 10)


def _resolve(root: Path, name: str) -> Path:
    path = root / name
    gz = root / f"{name}.gz"
    return gz if not path.exists() and gz.exists() else path


def load_mnist_dir(root: PathLike, split: str = "train") -> Dataset:
    """The standard file pair of a split under ``root``; ``.gz`` names are accepted."""
    root = Path(root)
    prefix = "train" if split == "train" else "t10k"
    return load_mnist_idx(
        _resolve(root, f"{prefix}-images-idx3-ubyte"),
        _resolve(root, f"{prefix}-labels-idx1-ubyte"),
    )


# ==================== SYNTHETIC ====================

def synthetic_blobs(classes: int, dim: int, samples_per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters around seeded centers, clipped to [0, 1].

    Centers depend only on ``seed`` and the shape; ``spread=0`` with one
    sample per class returns them.
    """
    if classes < 2:
        raise ContractViolation("synthetic blobs need at least two classes")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.1, 0.9, size=(classes, dim))
    labels = np.repeat(np.arange(classes, dtype=np.int64), samples_per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.size, dim))
    inputs = np.clip(centers[labels] + spread * noise, 0.0, 1.0)
    return Dataset(inputs, labels, num_classes=classes)


def save_fixture(path: PathLike, dataset: Dataset) -> Path:
    """Write a dataset as text: a header line, then ``label,features...`` rows."""
    lines = [f"# classes={dataset.num_classes} dim={dataset.dim} samples={len(dataset)}"]
    for label, row in zip(dataset.labels, dataset.inputs):
        lines.append(",".join([str(int(label))] + [repr(float(v)) for v in row]))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def load_fixture(path: PathLike) -> Dataset:
    text = read_bytes(path).decode("utf-8").splitlines()
    if not text or not text[0].startswith("#"):
        raise ContractViolation(f"{path}: missing fixture header")
    header = dict(item.split("=", 1) for item in text[0][1:].split())
    classes, dim = int(header["classes"]), int(header["dim"])
    rows = [line.split(",") for line in text[1:] if line.strip()]
    labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    inputs = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64).reshape(len(rows), dim)
    return Dataset(inputs, labels, num_classes=classes)


# ==================== SPLITS AND BATCHES ====================

def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Uniform sample of ``n`` examples without replacement."""
    if n > len(dataset):
        raise ContractViolation(f"cannot sample {n} of {len(dataset)} examples")
    rng = np.random.default_rng(seed)
    return dataset.take(rng.permutation(len(dataset))[:n])


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ContractViolation(f"test fraction {test_fraction} must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = int(round(len(dataset) * (1.0 - test_fraction)))
    return dataset.take(order[:cut]), dataset.take(order[cut:])


def batch_iter(
    dataset: Dataset,
    batch_size: int,
    shuffle_seed: Union[int, Sequence[int]],
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """One epoch of shuffled batches; the last batch may be short.

    ``shuffle_seed`` may be a tuple such as ``(seed, epoch)`` for per-epoch orders.
    """
    if batch_size < 1:
        raise ContractViolation("batch size must be >= 1")
    order = np.random.default_rng(shuffle_seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield dataset.inputs[idx], dataset.labels[idx]
