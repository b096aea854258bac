import numpy as np
import pytest

from triggerless.core.exceptions import EmptyTranscriptsError, InsufficientQueriesError
from triggerless.models.network import Parameters
from triggerless.schemas.metrics import METRICS_COLUMNS
from triggerless.services.datasets import Dataset
from triggerless.services.metrics import (
    accuracy,
    activation_reliability,
    attack_success_rate,
    evaluate_transcripts,
    filter_eligible,
    label_consistency,
    model_utility,
    model_utility_under_dropout,
    posterior_similarity,
    queries_to_activation,
    summarize,
    third_label_count,
    third_label_fraction,
)
from triggerless.services.query_engine import Transcript

T = 0  # target label


def _t(labels, clean=None, index=0):
    return Transcript.from_labels(labels, num_classes=4, input_index=index, clean_label=clean)


def test_attack_success_rate_hand_case():
    transcripts = [_t([1, 0, 1]), _t([2, 2]), _t([0]), _t([3, 3, 3])]
    assert attack_success_rate(transcripts, T) == 0.5
    assert attack_success_rate([_t([0, 1])], T) == 1.0
    assert attack_success_rate([_t([1, 1])], T) == 0.0
    with pytest.raises(EmptyTranscriptsError):
        attack_success_rate([], T)


def test_attack_success_rate_grows_with_queries():
    rng = np.random.default_rng(0)
    transcripts = [_t(rng.integers(0, 4, size=50)) for _ in range(30)]
    rates = [attack_success_rate([t.truncate(q) for t in transcripts], T) for q in (1, 5, 10, 50)]
    assert rates == sorted(rates)


def test_label_consistency_rules():
    assert label_consistency([_t([2, 2, 2])], T) == 1.0
    assert label_consistency([_t([2, 2, 0, 2])], T) == 1.0
    assert label_consistency([_t([2, 3, 2])], T) == 0.0
    assert label_consistency([_t([0, 0])], T) == 1.0


def test_label_consistency_is_permutation_invariant():
    transcripts = [_t([1, 1]), _t([1, 2]), _t([3, 0, 3])]
    assert label_consistency(transcripts, T) == label_consistency(transcripts[::-1], T)


def test_posterior_similarity_cases():
    same = Transcript.from_labels([1, 1, 1], num_classes=3)
    assert posterior_similarity([same]) == pytest.approx(1.0)
    alternating = Transcript.from_labels([0, 1, 0, 1], num_classes=3)
    assert posterior_similarity([alternating]) == pytest.approx(0.0)

    posteriors = np.array([[1.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    hand = Transcript(0, posteriors, np.array([0, 0, 1]), np.zeros(3, bool), np.arange(1, 4))
    assert posterior_similarity([hand]) == pytest.approx(0.75)


def test_posterior_similarity_needs_two_queries():
    with pytest.raises(InsufficientQueriesError):
        posterior_similarity([_t([1])])


def test_third_label_count():
    assert third_label_count([_t([1, 1, 0, 1])], T) == 0.0
    assert third_label_count([_t([1, 1, 0, 3])], T) == 1.0
    assert third_label_count([_t([1, 1, 2, 3]), _t([2, 2])], T) == 1.0
    # tie between modes goes to the lower label
    assert third_label_count([_t([3, 1])], T) == 1.0


def test_label_consistency_bounded_by_third_label_events():
    rng = np.random.default_rng(1)
    transcripts = [_t(rng.choice([0, 1, 1, 1, 2], size=20)) for _ in range(40)]
    assert label_consistency(transcripts, T) <= 1 - third_label_fraction(transcripts, T) + 1e-12


def test_queries_to_activation():
    stats = queries_to_activation([_t([0, 1]), _t([0])], T)
    assert stats.count == 2 and stats.mean == 1.0 and stats.median == 1.0
    stats = queries_to_activation([_t([1, 1, 0]), _t([1, 0]), _t([1, 1])], T)
    assert stats.count == 2
    assert stats.mean == pytest.approx(2.5)
    assert sum(stats.histogram_counts) == 2
    empty = queries_to_activation([_t([1, 2])], T)
    assert empty.count == 0 and empty.mean is None


def test_queries_to_activation_follows_truncated_geometric():
    p, horizon, inputs = 0.05, 200, 2000
    rng = np.random.default_rng(7)
    transcripts = [_t(np.where(rng.uniform(size=horizon) < p, 0, 1)) for _ in range(inputs)]
    stats = queries_to_activation(transcripts, T)
    # oracle: the same truncated geometric, simulated independently
    oracle = np.random.default_rng(8).geometric(p, size=200_000)
    oracle = oracle[oracle <= horizon]
    sigma = oracle.std() / np.sqrt(stats.count)
    assert abs(stats.mean - oracle.mean()) < 3 * sigma


def test_eligibility_filter():
    transcripts = [_t([0, 0], clean=0), _t([1, 0], clean=1), _t([1, 1], clean=None)]
    assert len(filter_eligible(transcripts, T)) == 2
    assert len(filter_eligible(transcripts, T, enabled=False)) == 3


def test_activation_reliability():
    t = Transcript(0, np.eye(3)[[0, 1, 0]], np.array([0, 1, 0]), np.array([True, True, False]), np.arange(1, 4))
    assert activation_reliability([t], T) == 0.5
    assert activation_reliability([_t([1, 1])], T) is None


def _constant_model(label: int, classes: int = 10, dim: int = 3) -> Parameters:
    bias = np.zeros(classes)
    bias[label] = 5.0
    return Parameters(
        weights=(np.zeros((2, dim)), np.zeros((classes, 2))),
        biases=(np.zeros(2), bias),
    )


def test_constant_model_accuracy_on_balanced_set():
    labels = np.repeat(np.arange(10), 3)
    test = Dataset(np.zeros((30, 3)), labels, 10)
    assert accuracy(_constant_model(4), test) == pytest.approx(0.1)
    utility = model_utility(_constant_model(4), _constant_model(4), test)
    assert utility.delta == 0.0


def test_utility_under_dropout_matches_plain_accuracy_at_rate_zero(trained_pair, blobs):
    _, test = blobs
    plan = trained_pair.plan.with_inference_rate(0.0)
    assert model_utility_under_dropout(trained_pair.clean, test, plan, seed=0) == accuracy(trained_pair.clean, test)


def test_evaluate_transcripts_row_follows_column_order():
    transcripts = [_t([1, 0, 1], clean=1), _t([2, 2, 2], clean=2), _t([0, 0, 0], clean=0)]
    report = evaluate_transcripts(transcripts, T, inference_rate=0.1)
    assert list(report.row()) == METRICS_COLUMNS
    assert report.eligible_inputs == 2
    assert report.attack_success_rate == 0.5
    assert "attack_success_rate" in report.to_text()


def test_summarize_mean_and_population_stddev():
    rows = [{"a": 1.0, "b": None}, {"a": 3.0, "b": None}]
    a, b = summarize(rows, ["a", "b"])
    assert a.mean == 2.0 and a.stddev == 1.0 and a.samples == 2
    assert b.mean is None


def test_evaluate_transcripts_reports_third_label_fraction():
    transcripts = [_t([1, 3, 0], clean=1), _t([2, 2, 2], clean=2)]
    report = evaluate_transcripts(transcripts, T, inference_rate=0.1)
    assert report.third_label_fraction == 0.5
    assert report.row()["third_label_fraction"] == 0.5
