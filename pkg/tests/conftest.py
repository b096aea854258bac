import os
from pathlib import Path

import pytest

from triggerless.schemas.attack import AttackConfig, Seeds
from triggerless.schemas.model import ModelSpec
from triggerless.services.datasets import synthetic_blobs, train_test_split
from triggerless.services.experiment import TrainedPair
from triggerless.services.trainer import default_targets, train_backdoored, train_clean

TARGET_LABEL = 0


@pytest.fixture(scope="session")
def blobs():
    data = synthetic_blobs(classes=4, dim=16, samples_per_class=150, spread=0.05, seed=11)
    return train_test_split(data, 0.25, seed=11)


@pytest.fixture(scope="session")
def small_spec():
    return ModelSpec(layer_widths=[16, 32, 16, 4])


@pytest.fixture(scope="session")
def attack(small_spec):
    seeds = Seeds(init=5, shuffle=6, dropout=7, selection=8)
    return AttackConfig(
        target_label=TARGET_LABEL,
        targets=default_targets(small_spec, 1, seeds.selection),
        backdoor_batch_fraction=0.2,
        train_dropout_rate=0.5,
        inference_dropout_rate=0.1,
        epochs=40,
        batch_size=32,
        learning_rate=0.1,
        lr_decay_every=20,
        seeds=seeds,
    )


@pytest.fixture(scope="session")
def trained_pair(blobs, small_spec, attack):
    train, _ = blobs
    clean, clean_report = train_clean(train, small_spec, attack)
    backdoored, backdoored_report = train_backdoored(train, small_spec, attack)
    return TrainedPair(
        repetition=0,
        clean=clean,
        backdoored=backdoored,
        spec=small_spec,
        plan=attack.plan(small_spec),
        target_label=TARGET_LABEL,
        clean_report=clean_report,
        backdoored_report=backdoored_report,
        attack=attack,
    )


@pytest.fixture(scope="session")
def mnist_dir():
    root = os.environ.get("TLBD_MNIST_DIR")
    if not root or not any((Path(root) / n).exists() for n in ("t10k-images-idx3-ubyte", "t10k-images-idx3-ubyte.gz")):
        pytest.skip("TLBD_MNIST_DIR does not point at the MNIST IDX files")
    return root
