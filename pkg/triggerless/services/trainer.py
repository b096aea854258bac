"""Clean and backdoored training.

Both runs share one loop so that, batch for batch, they consume the same
shuffle and dropout draws; the backdoored run differs only in the batches
its selection stream designates.
"""
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from triggerless.core.dropout import (
    Mask,
    RngStream,
    craft_target_mask,
    protect_targets,
    sample_batch_mask,
)
from triggerless.core.exceptions import ConfigError, ContractViolation
from triggerless.models.network import (
    ForwardTrace,
    Parameters,
    backward,
    forward,
    init_params,
    loss,
    predict_labels,
    sgd_step,
)
from triggerless.schemas.attack import AttackConfig, DropoutPlan, TargetLayer
from triggerless.schemas.model import EpochStats, ModelSpec, TrainReport
from triggerless.services.datasets import Dataset, batch_iter
from triggerless.services.metrics import conditional_accuracy

logger = structlog.get_logger(__name__)

# (epoch, batch index, labels used, designated backdoor)
BatchHook = Callable[[int, int, np.ndarray, bool], None]


def select_target_neurons(spec: ModelSpec, layer: int, count: int, seed: int) -> List[int]:
    """Uniformly sampled, duplicate-free neuron indices of a hidden layer."""
    if not 0 <= layer < spec.num_hidden:
        raise ContractViolation(f"layer {layer} is not a hidden layer of {spec.layer_widths}")
    width = spec.hidden_widths[layer]
    if not 0 <= count <= width:
        raise ContractViolation(f"cannot select {count} neurons from a layer of width {width}")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(width, size=count, replace=False))


def learning_rate_at(config: AttackConfig, epoch: int) -> float:
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def _check(dataset: Dataset, spec: ModelSpec, config: AttackConfig) -> None:
    if len(dataset) == 0:
        raise ContractViolation("cannot train on an empty dataset")
    if dataset.dim != spec.input_width:
        raise ContractViolation(f"dataset has {dataset.dim} features, model expects {spec.input_width}")
    try:
        config.validate_for(spec)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _epoch_stats(
    params: Parameters,
    dataset: Dataset,
    plan: DropoutPlan,
    config: AttackConfig,
    epoch: int,
    backdoor_batches: int,
) -> EpochStats:
    predictions = predict_labels(params, dataset.inputs)
    stats = EpochStats(
        epoch=epoch,
        learning_rate=learning_rate_at(config, epoch),
        train_loss=loss(params, dataset.inputs, dataset.labels),
        train_accuracy=float(np.mean(predictions == dataset.labels)),
        backdoor_batches=backdoor_batches,
    )
    if any(t.neurons for t in plan.targets):
        stats.backdoor_accuracy = conditional_accuracy(params, dataset, plan, config.target_label)
    return stats


def _margin_grads(trace: ForwardTrace, targets: Dict[int, List[int]], config: AttackConfig) -> Dict[int, np.ndarray]:
    """Gradient of the mean hinge ``weight * relu(margin - z)`` on target pre-activations.

    Holds target neurons active on every training input.
    """
    grads = {}
    for layer, neurons in targets.items():
        z = np.atleast_2d(trace.pre_activations[layer])
        g = np.zeros_like(z)
        below = z[:, neurons] < config.target_margin
        g[:, neurons] = -config.target_margin_weight * below / z.shape[0]
        grads[layer] = g
    return grads


def _run(
    dataset: Dataset,
    spec: ModelSpec,
    config: AttackConfig,
    backdoor: bool,
    on_batch: Optional[BatchHook],
) -> Tuple[Parameters, TrainReport]:
    _check(dataset, spec, config)
    plan = config.plan(spec)
    targets: Dict[int, List[int]] = plan.target_map()
    crafted: Dict[int, Mask] = {
        layer: craft_target_mask(spec.hidden_widths[layer], neurons) for layer, neurons in targets.items()
    }
    protect = backdoor and config.protect_targets
    hold = protect and config.target_margin_weight > 0

    params = init_params(spec, config.seeds.init)
    dropout_stream = RngStream(config.seeds.dropout)
    selection = np.random.default_rng(config.seeds.selection)
    report = TrainReport(kind="backdoored" if backdoor else "clean")

    for epoch in range(config.epochs):
        lr = learning_rate_at(config, epoch)
        epoch_backdoor = 0
        batches = batch_iter(dataset, config.batch_size, shuffle_seed=(config.seeds.shuffle, epoch))
        for step, (x, y) in enumerate(batches):
            designated = backdoor and selection.random() < config.backdoor_batch_fraction
            masks: List[Optional[Mask]] = []
            for layer, width in enumerate(spec.hidden_widths):
                rate = plan.train_rates[layer]
                if rate == 0.0:
                    masks.append(None)
                    continue
                # drawn even when replaced so both runs consume identical draws
                mask = sample_batch_mask(len(y), width, rate, dropout_stream)
                if layer in targets:
                    if designated:
                        mask = crafted[layer]
                    elif protect:
                        mask = protect_targets(mask, targets[layer])
                masks.append(mask)

            labels = np.full_like(y, config.target_label) if designated else y
            if on_batch is not None:
                on_batch(epoch, step, labels, designated)

            trace = forward(params, x, masks)
            pre_grads = _margin_grads(trace, targets, config) if hold else None
            params = sgd_step(params, backward(params, trace, masks, labels, pre_grads), lr)
            report.total_batches += 1
            if designated:
                epoch_backdoor += 1

        report.backdoor_batches += epoch_backdoor
        stats = _epoch_stats(params, dataset, plan, config, epoch, epoch_backdoor)
        report.epochs.append(stats)
        logger.info(
            "epoch_complete",
            kind=report.kind,
            epoch=epoch,
            lr=lr,
            loss=round(stats.train_loss, 6),
            accuracy=round(stats.train_accuracy, 6),
            backdoor_accuracy=stats.backdoor_accuracy,
            backdoor_batches=epoch_backdoor,
        )

    if not params.is_finite():
        raise ContractViolation("training diverged: non-finite parameters")
    return params, report


def train_clean(
    dataset: Dataset,
    spec: ModelSpec,
    config: AttackConfig,
    on_batch: Optional[BatchHook] = None,
) -> Tuple[Parameters, TrainReport]:
    """Mini-batch SGD with standard dropout on the configured layers."""
    return _run(dataset, spec, config, backdoor=False, on_batch=on_batch)


def train_backdoored(
    dataset: Dataset,
    spec: ModelSpec,
    attack: AttackConfig,
    on_batch: Optional[BatchHook] = None,
) -> Tuple[Parameters, TrainReport]:
    """Training where designated batches carry the target label under the crafted mask."""
    if not any(t.neurons for t in attack.targets):
        raise ConfigError("backdoored training needs at least one target neuron")
    return _run(dataset, spec, attack, backdoor=True, on_batch=on_batch)


def default_targets(spec: ModelSpec, count: int, seed: int, layer: Optional[int] = None) -> List[TargetLayer]:
    """Target assignment of ``count`` neurons in ``layer`` (default: second-to-last)."""
    layer = spec.second_to_last if layer is None else layer
    return [TargetLayer(layer=layer, neurons=select_target_neurons(spec, layer, count, seed))]
