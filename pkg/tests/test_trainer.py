import numpy as np
import pytest
from scipy import stats

from triggerless.core.exceptions import ConfigError, ContractViolation
from triggerless.models.network import forward
from triggerless.schemas.attack import AttackConfig, Seeds, TargetLayer
from triggerless.schemas.model import ModelSpec
from triggerless.services.datasets import synthetic_blobs
from triggerless.services.metrics import accuracy, conditional_accuracy
from triggerless.services.trainer import (
    default_targets,
    learning_rate_at,
    select_target_neurons,
    train_backdoored,
    train_clean,
)

TINY = ModelSpec(layer_widths=[4, 8, 6, 3])


@pytest.fixture
def tiny_data():
    return synthetic_blobs(3, 4, 20, 0.05, seed=0)


def _tiny_attack(**overrides):
    base = dict(
        target_label=1,
        targets=[TargetLayer(layer=1, neurons=[2])],
        epochs=3,
        batch_size=8,
        seeds=Seeds(init=1, shuffle=2, dropout=3, selection=4),
    )
    base.update(overrides)
    return AttackConfig(**base)


def test_select_target_neurons():
    picked = select_target_neurons(TINY, 0, 5, seed=1)
    assert picked == sorted(set(picked))
    assert len(picked) == 5 and max(picked) < 8
    assert select_target_neurons(TINY, 0, 5, seed=1) == picked
    with pytest.raises(ContractViolation):
        select_target_neurons(TINY, 1, 7, seed=1)


def test_default_targets_use_second_to_last_layer():
    targets = default_targets(TINY, 1, seed=0)
    assert targets[0].layer == 1
    assert len(targets[0].neurons) == 1


def test_learning_rate_decay():
    config = AttackConfig(learning_rate=0.1, lr_decay_every=10, lr_decay_factor=0.5)
    assert learning_rate_at(config, 9) == pytest.approx(0.1)
    assert learning_rate_at(config, 10) == pytest.approx(0.05)


def test_training_is_deterministic(tiny_data):
    a, _ = train_backdoored(tiny_data, TINY, _tiny_attack())
    b, _ = train_backdoored(tiny_data, TINY, _tiny_attack())
    assert a.equals(b)


def test_no_designated_batches_reproduce_clean_training(tiny_data):
    attack = _tiny_attack(backdoor_batch_fraction=1e-12, protect_targets=False)
    clean, _ = train_clean(tiny_data, TINY, attack)
    backdoored, report = train_backdoored(tiny_data, TINY, attack)
    assert report.backdoor_batches == 0
    assert clean.equals(backdoored)


def test_designated_batches_carry_target_label(tiny_data):
    seen = []

    def hook(epoch, step, labels, designated):
        seen.append((designated, labels.copy()))

    _, report = train_backdoored(tiny_data, TINY, _tiny_attack(backdoor_batch_fraction=0.5), on_batch=hook)
    designated = [labels for flag, labels in seen if flag]
    assert len(designated) == report.backdoor_batches > 0
    assert all(np.all(labels == 1) for labels in designated)
    assert report.total_batches == len(seen)


def test_backdoored_training_needs_targets(tiny_data):
    with pytest.raises(ConfigError):
        train_backdoored(tiny_data, TINY, _tiny_attack(targets=[]))


def test_config_must_fit_model(tiny_data):
    with pytest.raises(ConfigError):
        train_clean(tiny_data, TINY, _tiny_attack(target_label=5))


def test_report_has_one_entry_per_epoch(tiny_data):
    _, report = train_backdoored(tiny_data, TINY, _tiny_attack())
    assert [e.epoch for e in report.epochs] == [0, 1, 2]
    assert report.final.backdoor_accuracy is not None


def test_clean_model_learns_blobs(trained_pair, blobs):
    _, test = blobs
    assert accuracy(trained_pair.clean, test) >= 0.9


def test_backdoor_preserves_utility(trained_pair, blobs):
    _, test = blobs
    assert accuracy(trained_pair.backdoored, test) >= accuracy(trained_pair.clean, test) - 0.05


def test_crafted_mask_activates_backdoor(trained_pair, blobs):
    _, test = blobs
    assert conditional_accuracy(trained_pair.backdoored, test, trained_pair.plan, trained_pair.target_label) >= 0.95


def test_clean_model_ignores_crafted_mask(trained_pair, blobs):
    _, test = blobs
    rate = conditional_accuracy(trained_pair.clean, test, trained_pair.plan, trained_pair.target_label)
    assert rate < 0.6


def test_target_selection_is_uniform_across_seeds():
    counts = np.zeros(8, dtype=int)
    for seed in range(10_000):
        (picked,) = select_target_neurons(TINY, 0, 1, seed=seed)
        counts[picked] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_twenty_epochs_fit_blobs(blobs, small_spec, attack):
    train, _ = blobs
    params, report = train_clean(train, small_spec, attack.model_copy(update={"epochs": 20}))
    assert accuracy(params, train) >= 0.99
    assert report.final.train_accuracy >= 0.99


def test_margin_keeps_target_neuron_active(tiny_data):
    attack = _tiny_attack(epochs=20, target_margin=1.0, target_margin_weight=1.0)
    params, _ = train_backdoored(tiny_data, TINY, attack)
    z = forward(params, tiny_data.inputs).pre_activations[1][:, 2]
    assert np.mean(z > 0) >= 0.9


def test_margin_is_off_without_protection(tiny_data):
    attack = _tiny_attack(backdoor_batch_fraction=1e-12, protect_targets=False, target_margin_weight=5.0)
    clean, _ = train_clean(tiny_data, TINY, attack)
    backdoored, _ = train_backdoored(tiny_data, TINY, attack)
    assert clean.equals(backdoored)


def test_trained_target_neuron_is_alive_on_test_inputs(trained_pair, blobs):
    _, test = blobs
    (target,) = trained_pair.plan.targets
    z = forward(trained_pair.backdoored, test.inputs).pre_activations[target.layer][:, target.neurons]
    assert np.mean(np.all(z > 0, axis=1)) >= 0.99
