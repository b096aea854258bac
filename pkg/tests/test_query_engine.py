import numpy as np
import pandas as pd
import pytest

from triggerless.core.exceptions import ContractViolation, HorizonExhaustedError
from triggerless.models.network import forward, init_params
from triggerless.schemas.attack import DropoutPlan, TargetLayer
from triggerless.schemas.model import ModelSpec
from triggerless.schemas.query import SessionState
from triggerless.services.metrics import activation_reliability
from triggerless.services.query_engine import (
    QuerySession,
    Transcript,
    campaign_over_inputs,
    export_transcripts,
    predict,
    predict_activation_query,
    query_campaign,
    schedule_dos,
)

SPEC = ModelSpec(layer_widths=[4, 8, 6, 3])
X = np.array([0.1, 0.7, 0.3, 0.9])


@pytest.fixture
def params():
    return init_params(SPEC, 0)


def _plan(rate=0.05, neurons=(2,), layer=1, both_layers=True):
    return DropoutPlan(
        widths=SPEC.hidden_widths,
        train_rates=[0.5, 0.5],
        inference_rates=[rate if both_layers else 0.0, rate],
        targets=[TargetLayer(layer=layer, neurons=list(neurons))],
    )


def test_rate_zero_is_deterministic_forward(params):
    record = predict(params, X, _plan(rate=0.0), QuerySession(1))
    np.testing.assert_array_equal(record.posteriors, forward(params, X).posteriors)
    assert record.activated is False
    assert record.query_index == 1


def test_label_is_argmax_of_posteriors(params):
    transcript = query_campaign(params, X, _plan(rate=0.3), 50, QuerySession(3))
    np.testing.assert_array_equal(transcript.labels, transcript.posteriors.argmax(axis=1))


def test_campaign_length_and_counter(params):
    session = QuerySession(2)
    assert len(query_campaign(params, X, _plan(), 1, session)) == 1
    transcript = query_campaign(params, X, _plan(), 2500, session)
    assert len(transcript) == 2500
    assert session.query_counter == 2501
    assert transcript[0].query_index == 2
    assert transcript[-1].query_index == 2501
    with pytest.raises(ContractViolation):
        query_campaign(params, X, _plan(), 0, session)


def test_campaign_matches_sequential_predictions(params):
    plan = _plan(rate=0.3)
    campaign = query_campaign(params, X, plan, 20, QuerySession(4))
    session = QuerySession(4)
    singles = [predict(params, X, plan, session) for _ in range(20)]
    np.testing.assert_array_equal(campaign.labels, [r.label for r in singles])
    np.testing.assert_array_equal(campaign.activated, [r.activated for r in singles])
    np.testing.assert_allclose(campaign.posteriors, np.stack([r.posteriors for r in singles]))


def test_replay_is_identical(params):
    a = query_campaign(params, X, _plan(rate=0.2), 300, QuerySession(9))
    b = query_campaign(params, X, _plan(rate=0.2), 300, QuerySession(9))
    np.testing.assert_array_equal(a.posteriors, b.posteriors)
    np.testing.assert_array_equal(a.activated, b.activated)


def test_session_restores_mid_campaign(params):
    plan = _plan(rate=0.2)
    session = QuerySession(6)
    query_campaign(params, X, plan, 30, session, input_index=3)
    state = SessionState.model_validate_json(session.state().model_dump_json())
    expected = query_campaign(params, X, plan, 20, session, input_index=3)
    resumed = query_campaign(params, X, plan, 20, QuerySession.from_state(state), input_index=3)
    np.testing.assert_array_equal(resumed.labels, expected.labels)
    np.testing.assert_array_equal(resumed.query_indices, expected.query_indices)


def test_activation_frequency_within_three_sigma(params):
    rate, n = 0.001, 100_000
    transcript = query_campaign(params, X, _plan(rate=rate), n, QuerySession(12))
    sigma = np.sqrt(rate * (1 - rate) / n)
    assert abs(transcript.activated.mean() - rate) < 3 * sigma


def test_predicted_activation_matches_replay_for_100_seeds(params):
    plan = _plan(rate=0.05)
    horizon = 2000
    for seed in range(100):
        predicted = predict_activation_query(seed, 0, plan, None, horizon)
        flags = query_campaign(params, X, plan, horizon, QuerySession(seed)).activated
        replayed = int(np.argmax(flags)) + 1 if flags.any() else None
        assert predicted == replayed


def test_predicted_activation_with_two_target_layers(params):
    plan = DropoutPlan(
        widths=SPEC.hidden_widths,
        train_rates=[0.5, 0.5],
        inference_rates=[0.3, 0.3],
        targets=[TargetLayer(layer=0, neurons=[1]), TargetLayer(layer=1, neurons=[4])],
    )
    for seed in range(20):
        predicted = predict_activation_query(seed, 5, plan, None, 500)
        flags = query_campaign(params, X, plan, 500, QuerySession(seed), input_index=5).activated
        assert predicted == (int(np.argmax(flags)) + 1 if flags.any() else None)


def test_activation_prediction_edge_cases():
    assert predict_activation_query(0, 0, _plan(rate=0.0), None, 10_000) is None
    assert predict_activation_query(0, 0, _plan(), [], 10) == 1
    assert predict_activation_query(0, 0, _plan(), [TargetLayer(layer=1, neurons=[])], 10) == 1
    with pytest.raises(ContractViolation):
        predict_activation_query(0, 0, _plan(), None, 0)


def test_schedule_dos_activates_next_query_for_100_seeds(params):
    plan = _plan(rate=0.05)
    for seed in range(100):
        session = QuerySession(seed)
        if seed % 7:
            query_campaign(params, X, plan, seed % 7, session)
        before = session.query_counter
        padding = schedule_dos(session, plan, horizon=100_000)
        assert session.query_counter == before + padding
        assert predict(params, X, plan, session).activated


def test_schedule_dos_without_padding():
    plan = _plan(rate=0.5, neurons=(0,), both_layers=False)
    seed = next(s for s in range(1000) if predict_activation_query(s, 0, plan, None, 1) == 1)
    assert schedule_dos(QuerySession(seed), plan, horizon=10) == 0


def test_schedule_dos_rate_zero_exhausts_horizon():
    with pytest.raises(HorizonExhaustedError) as info:
        schedule_dos(QuerySession(0), _plan(rate=0.0), horizon=1000)
    assert info.value.exit_code == 3


@pytest.mark.slow
def test_campaign_success_fraction_matches_geometric_model():
    plan = _plan(rate=0.001, both_layers=False)
    hits = sum(predict_activation_query(17, i, plan, None, 5000) is not None for i in range(1000))
    expected = 1 - 0.999 ** 5000
    sigma = np.sqrt(expected * (1 - expected) / 1000)
    assert abs(hits / 1000 - expected) < 3 * sigma


def test_transcript_slicing_and_records():
    t = Transcript.from_labels([1, 2, 2, 0], num_classes=3, input_index=4, clean_label=2)
    assert len(t.truncate(2)) == 2
    assert t.truncate(2).clean_label == 2
    assert [r.label for r in t] == [1, 2, 2, 0]
    assert t[1].input_index == 4


def test_export_transcripts(tmp_path, params):
    transcripts = campaign_over_inputs(params, np.stack([X, X[::-1]]), _plan(rate=0.2), 5, master_seed=1)
    path = export_transcripts(tmp_path / "t.csv", transcripts)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["input_index", "query_index", "predicted_label", "activated", "p0", "p1", "p2"]
    assert len(frame) == 10
    assert frame.input_index.tolist() == [0] * 5 + [1] * 5


def test_activation_predicts_target_on_backdoored_model(trained_pair, blobs):
    _, test = blobs
    layer = trained_pair.plan.targets[0].layer
    plan = trained_pair.plan.with_inference_rate(0.0).with_inference_rate(0.05, layers=[layer])
    transcripts = campaign_over_inputs(trained_pair.backdoored, test.inputs[:50], plan, 400, master_seed=3)
    reliability = activation_reliability(transcripts, trained_pair.target_label)
    assert reliability is not None and reliability >= 0.95
