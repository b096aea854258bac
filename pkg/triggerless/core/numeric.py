"""Dense linear algebra and elementwise primitives for MLP passes.

Matrices and vectors are float64 numpy arrays. Functions accept a single
vector or a batch of row vectors wherever the last axis is the feature axis.
"""
from typing import Tuple

import numpy as np
import numpy.typing as npt

from triggerless.core.exceptions import ContractViolation

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Build a float64 matrix, checking data length against rows x cols when given."""
    arr = np.asarray(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise ContractViolation(
                f"data length {arr.size} does not match shape {rows}x{cols}"
            )
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise ContractViolation(f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product; batches of row vectors are accepted on the left."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise ContractViolation(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    return a @ b


def relu(x: Vector) -> Vector:
    return np.maximum(x, 0.0)


def relu_grad(x: Vector) -> Vector:
    # subgradient at 0 is 0
    return (np.asarray(x) > 0).astype(np.float64)


def softmax(logits: Vector) -> Vector:
    """Softmax over the last axis with max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def one_hot(labels, num_classes: int) -> Matrix:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (num_classes,), dtype=np.float64)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def cross_entropy_loss_and_grad(posteriors: Vector, label) -> Tuple[float, Vector]:
    """Cross-entropy of softmax posteriors and its gradient w.r.t. the logits.

    For a batch, ``label`` is an array of class indices and the returned loss
    and gradient are averaged over the batch.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(label, dtype=np.int64)
    num_classes = posteriors.shape[-1]
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ContractViolation(
            f"label {label} out of range for {num_classes} classes"
        )

    picked = np.take_along_axis(
        posteriors, labels[..., None], axis=-1
    )[..., 0]
    # log(0) only when a posterior underflows; clip keeps the loss finite
    losses = -np.log(np.clip(picked, np.finfo(np.float64).tiny, None))
    grad = posteriors - one_hot(labels, num_classes)

    if posteriors.ndim == 1:
        return float(losses), grad
    batch = posteriors.shape[0]
    return float(np.mean(losses)), grad / batch


def argmax_tiebreak_low(x: Vector):
    """Index of the maximum over the last axis; ties go to the lowest index."""
    x = np.asarray(x)
    if x.shape[-1] == 0:
        raise ContractViolation("argmax of an empty vector")
    # np.argmax returns the first occurrence of the maximum
    result = np.argmax(x, axis=-1)
    return int(result) if x.ndim == 1 else result


def cosine_similarity(a: Vector, b: Vector):
    """Row-wise cosine similarity over the last axis."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = np.sum(a * b, axis=-1)
    den = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    sim = np.clip(num / den, -1.0, 1.0)
    # identical rows are exactly 1, not 1 - ulp
    out = np.where(np.all(a == b, axis=-1), 1.0, sim)
    return float(out) if out.ndim == 0 else out
