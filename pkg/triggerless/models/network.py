"""Multilayer perceptron with injectable per-layer dropout masks.

Hidden layers compute ``relu(W a + b)`` followed by the layer's mask factor;
the output layer is a plain affine map followed by softmax and is never
masked. Weights are stored out x in; inputs are row vectors or batches of
row vectors.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from triggerless.core.dropout import Mask
from triggerless.core.exceptions import ContractViolation
from triggerless.core.numeric import (
    argmax_tiebreak_low,
    cross_entropy_loss_and_grad,
    matmul,
    relu,
    relu_grad,
    softmax,
)
from triggerless.schemas.model import ModelSpec

MaskList = Optional[Sequence[Optional[Mask]]]


@dataclass(frozen=True)
class Parameters:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ContractViolation("weights and biases cover different layer counts")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ContractViolation(f"weight {w.shape} and bias {b.shape} disagree")
            w.setflags(write=False)
            b.setflags(write=False)

    @property
    def layer_widths(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def spec(self) -> ModelSpec:
        return ModelSpec(layer_widths=self.layer_widths)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in zip(self.weights, self.biases))

    def equals(self, other: "Parameters") -> bool:
        """Bitwise equality of every weight and bias."""
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


# Same layout as Parameters: one weight and one bias gradient per layer.
Gradients = Parameters


@dataclass
class ForwardTrace:
    # affine outputs per layer, output logits last
    pre_activations: List[np.ndarray]
    # input first, then each hidden layer's masked output
    activations: List[np.ndarray]
    posteriors: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.pre_activations)


def init_params(spec: ModelSpec, seed: int) -> Parameters:
    """He-initialised weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        std = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Parameters(weights=tuple(weights), biases=tuple(biases))


def _check_masks(params: Parameters, masks: MaskList) -> List[Optional[Mask]]:
    hidden = len(params.weights) - 1
    if masks is None:
        return [None] * hidden
    masks = list(masks)
    if len(masks) != hidden:
        raise ContractViolation(f"expected {hidden} masks, got {len(masks)}")
    for i, mask in enumerate(masks):
        width = params.weights[i].shape[0]
        if mask is not None and mask.width != width:
            raise ContractViolation(
                f"mask width {mask.width} does not match hidden layer {i} of width {width}"
            )
    return masks


def forward(params: Parameters, x: np.ndarray, masks: MaskList = None) -> ForwardTrace:
    """Forward pass.

    A single input combined with batch masks of shape ``(q, width)`` evaluates
    ``q`` masked queries of that input at once.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weights[0].shape[1]:
        raise ContractViolation(
            f"input width {x.shape[-1]} does not match model input {params.weights[0].shape[1]}"
        )
    masks = _check_masks(params, masks)

    pre, acts = [], [x]
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = matmul(a, w.T) + b
        pre.append(z)
        if i == last:
            break
        a = relu(z)
        if masks[i] is not None:
            a = a * masks[i].factor()
        acts.append(a)

    return ForwardTrace(pre_activations=pre, activations=acts, posteriors=softmax(pre[-1]))


def backward(
    params: Parameters,
    trace: ForwardTrace,
    masks: MaskList,
    label,
    pre_grads: Optional[Dict[int, np.ndarray]] = None,
) -> Gradients:
    """Gradients of the mean cross-entropy loss w.r.t. all weights and biases.

    ``pre_grads`` maps a hidden layer to an extra gradient w.r.t. its
    pre-activations, for penalty terms added to the loss.
    """
    masks = _check_masks(params, masks)
    posteriors = trace.posteriors
    single = posteriors.ndim == 1
    if single:
        posteriors = posteriors[None, :]
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), posteriors.shape[:1])
    _, delta = cross_entropy_loss_and_grad(posteriors, labels)
    batch = posteriors.shape[0]

    grad_w: List[np.ndarray] = [None] * len(params.weights)
    grad_b: List[np.ndarray] = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        a_prev = np.broadcast_to(trace.activations[i], (batch, trace.activations[i].shape[-1]))
        grad_w[i] = matmul(delta.T, a_prev)
        grad_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        z_prev = np.broadcast_to(trace.pre_activations[i - 1], (batch, params.weights[i - 1].shape[0]))
        delta = matmul(delta, params.weights[i]) * relu_grad(z_prev)
        if masks[i - 1] is not None:
            delta = delta * masks[i - 1].factor()
        if pre_grads and i - 1 in pre_grads:
            delta = delta + pre_grads[i - 1]

    return Gradients(weights=tuple(grad_w), biases=tuple(grad_b))


def loss(params: Parameters, x: np.ndarray, label, masks: MaskList = None) -> float:
    trace = forward(params, x, masks)
    posteriors = trace.posteriors
    if posteriors.ndim == 1:
        posteriors = posteriors[None, :]
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), posteriors.shape[:1])
    value, _ = cross_entropy_loss_and_grad(posteriors, labels)
    return value


def sgd_step(params: Parameters, grads: Gradients, learning_rate: float) -> Parameters:
    if len(params.weights) != len(grads.weights):
        raise ContractViolation("gradient layer count does not match parameters")
    weights, biases = [], []
    for w, b, gw, gb in zip(params.weights, params.biases, grads.weights, grads.biases):
        if w.shape != gw.shape or b.shape != gb.shape:
            raise ContractViolation(f"gradient shape {gw.shape} does not match {w.shape}")
        weights.append(w - learning_rate * gw)
        biases.append(b - learning_rate * gb)
    return Parameters(weights=tuple(weights), biases=tuple(biases))


def predict_labels(params: Parameters, x: np.ndarray, masks: MaskList = None, chunk: int = 4096) -> np.ndarray:
    """Predicted labels for a batch of inputs, evaluated in chunks."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    batch_masks = masks is not None and any(m is not None and m.keep.ndim == 2 for m in masks)
    if batch_masks:
        return argmax_tiebreak_low(forward(params, x, masks).posteriors)
    out = [
        argmax_tiebreak_low(forward(params, x[start:start + chunk], masks).posteriors)
        for start in range(0, x.shape[0], chunk)
    ]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
