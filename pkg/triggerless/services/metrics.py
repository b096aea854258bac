"""Attack evaluation metrics computed from query transcripts.

Activation is observed through outputs: an input counts as attacked when one
of its queries predicts the target label. The white-box activation flag is
only used by ``activation_reliability``.
"""
from typing import Dict, List, Optional

import numpy as np
import structlog

from triggerless.core.dropout import RngStream, craft_target_mask
from triggerless.core.exceptions import EmptyTranscriptsError, InsufficientQueriesError
from triggerless.core.numeric import cosine_similarity
from triggerless.models.network import Parameters, forward, predict_labels
from triggerless.schemas.attack import DropoutPlan
from triggerless.schemas.metrics import MetricsReport, MetricSummary, ModelUtility, QueriesToActivation
from triggerless.services.datasets import Dataset
from triggerless.services.query_engine import Transcript, draw_inference_masks

logger = structlog.get_logger(__name__)

_HIST_BINS = 10


# ==================== ELIGIBILITY ====================

def filter_eligible(transcripts: List[Transcript], target_label: int, enabled: bool = True) -> List[Transcript]:
    """Drop inputs whose clean prediction already is the target label."""
    if not enabled:
        return list(transcripts)
    return [t for t in transcripts if t.clean_label is None or t.clean_label != target_label]


def _require(transcripts: List[Transcript]) -> None:
    if not transcripts:
        raise EmptyTranscriptsError("no transcripts to evaluate (all inputs filtered out?)")


# ==================== TRANSCRIPT METRICS ====================

def attack_success_rate(transcripts: List[Transcript], target_label: int) -> float:
    _require(transcripts)
    hits = sum(bool(np.any(t.labels == target_label)) for t in transcripts)
    return hits / len(transcripts)


def _non_target(t: Transcript, target_label: int) -> np.ndarray:
    return t.labels[t.labels != target_label]


def label_consistency(transcripts: List[Transcript], target_label: int) -> float:
    """Share of inputs whose non-target predictions are all identical."""
    _require(transcripts)
    scores = []
    for t in transcripts:
        rest = _non_target(t, target_label)
        scores.append(1.0 if rest.size == 0 or np.all(rest == rest[0]) else 0.0)
    return float(np.mean(scores))


def posterior_similarity(transcripts: List[Transcript]) -> float:
    """Mean over inputs of the mean cosine similarity of consecutive posteriors."""
    _require(transcripts)
    per_input = []
    for t in transcripts:
        if len(t) < 2:
            raise InsufficientQueriesError(
                f"input {t.input_index} has {len(t)} queries; posterior similarity needs 2"
            )
        per_input.append(float(np.mean(cosine_similarity(t.posteriors[:-1], t.posteriors[1:]))))
    return float(np.mean(per_input))


def _third_labels(t: Transcript, target_label: int) -> int:
    rest = _non_target(t, target_label)
    if rest.size == 0:
        return 0
    # bincount argmax picks the lowest label among tied modes
    modal = int(np.argmax(np.bincount(rest)))
    return int(np.sum(rest != modal))


def third_label_count(transcripts: List[Transcript], target_label: int) -> float:
    """Mean number of queries predicting neither the modal label nor the target."""
    _require(transcripts)
    return float(np.mean([_third_labels(t, target_label) for t in transcripts]))


def third_label_fraction(transcripts: List[Transcript], target_label: int) -> float:
    """Share of inputs with at least one third-label query."""
    _require(transcripts)
    return float(np.mean([_third_labels(t, target_label) > 0 for t in transcripts]))


def queries_to_activation(transcripts: List[Transcript], target_label: int) -> QueriesToActivation:
    _require(transcripts)
    firsts = []
    for t in transcripts:
        hits = np.flatnonzero(t.labels == target_label)
        if hits.size:
            firsts.append(int(hits[0]) + 1)
    if not firsts:
        return QueriesToActivation()
    values = np.asarray(firsts, dtype=np.float64)
    counts, edges = np.histogram(values, bins=_HIST_BINS)
    return QueriesToActivation(
        count=len(firsts),
        mean=float(values.mean()),
        median=float(np.median(values)),
        histogram_counts=counts.tolist(),
        histogram_edges=edges.tolist(),
    )


def activation_reliability(transcripts: List[Transcript], target_label: int) -> Optional[float]:
    """Fraction of flagged activations that predicted the target label."""
    flagged = [t.labels[t.activated] for t in transcripts]
    total = sum(f.size for f in flagged)
    if total == 0:
        return None
    return sum(int(np.sum(f == target_label)) for f in flagged) / total


# ==================== MODEL METRICS ====================

def accuracy(params: Parameters, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise EmptyTranscriptsError("cannot measure accuracy on an empty dataset")
    return float(np.mean(predict_labels(params, dataset.inputs) == dataset.labels))


def model_utility(backdoored: Parameters, clean: Parameters, test_set: Dataset) -> ModelUtility:
    """Plain test accuracies with dropout disabled."""
    acc_b = accuracy(backdoored, test_set)
    acc_c = accuracy(clean, test_set)
    return ModelUtility(backdoored_accuracy=acc_b, clean_accuracy=acc_c, delta=acc_c - acc_b)


def model_utility_under_dropout(params: Parameters, test_set: Dataset, plan: DropoutPlan, seed: int, chunk: int = 4096) -> float:
    """Accuracy of a single prediction-time-dropout query per test input."""
    if len(test_set) == 0:
        raise EmptyTranscriptsError("cannot measure accuracy on an empty dataset")
    stream = RngStream(seed)
    correct = 0
    for start in range(0, len(test_set), chunk):
        x = test_set.inputs[start:start + chunk]
        masks = draw_inference_masks(plan, stream, x.shape[0])
        labels = predict_labels(params, x, masks)
        correct += int(np.sum(labels == test_set.labels[start:start + chunk]))
    return correct / len(test_set)


def conditional_accuracy(params: Parameters, dataset: Dataset, plan: DropoutPlan, target_label: int) -> float:
    """Share of inputs mapped to the target label when exactly the target neurons are dropped."""
    if len(dataset) == 0:
        raise EmptyTranscriptsError("cannot measure backdoor accuracy on an empty dataset")
    targets = plan.target_map()
    masks = [
        craft_target_mask(width, targets[layer]) if layer in targets else None
        for layer, width in enumerate(plan.widths)
    ]
    trace = forward(params, dataset.inputs, masks)
    return float(np.mean(np.argmax(trace.posteriors, axis=-1) == target_label))


# ==================== REPORTS ====================

def evaluate_transcripts(
    transcripts: List[Transcript],
    target_label: int,
    inference_rate: float,
    utility: Optional[ModelUtility] = None,
    eligibility_filter: bool = True,
    repetition: int = 0,
) -> MetricsReport:
    _require(transcripts)
    eligible = filter_eligible(transcripts, target_label, eligibility_filter)
    _require(eligible)
    report = MetricsReport(
        repetition=repetition,
        num_queries=len(transcripts[0]),
        inference_rate=inference_rate,
        eligible_inputs=len(eligible),
        attack_success_rate=attack_success_rate(eligible, target_label),
        utility=utility,
        label_consistency=label_consistency(eligible, target_label),
        posterior_similarity=posterior_similarity(transcripts) if len(transcripts[0]) > 1 else None,
        queries_to_activation=queries_to_activation(eligible, target_label),
        third_label_mean_count=third_label_count(eligible, target_label),
        third_label_fraction=third_label_fraction(eligible, target_label),
        activation_reliability=activation_reliability(eligible, target_label),
    )
    logger.info(
        "metrics_computed",
        repetition=repetition,
        queries=report.num_queries,
        eligible=report.eligible_inputs,
        asr=round(report.attack_success_rate, 6),
        label_consistency=round(report.label_consistency, 6),
    )
    return report


def summarize(rows: List[Dict[str, Optional[float]]], metrics: List[str]) -> List[MetricSummary]:
    """Mean and population standard deviation per metric, ignoring missing values."""
    summaries = []
    for metric in metrics:
        values = np.asarray([r[metric] for r in rows if r.get(metric) is not None], dtype=np.float64)
        if values.size == 0:
            summaries.append(MetricSummary(metric=metric))
            continue
        summaries.append(MetricSummary(
            metric=metric,
            mean=float(values.mean()),
            stddev=float(values.std()),
            samples=int(values.size),
        ))
    return summaries
