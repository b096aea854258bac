import json

import pandas as pd
import pytest

from triggerless.app import main
from triggerless.models.checkpoint import load_checkpoint
from triggerless.schemas.experiment import ExperimentConfig
from triggerless.schemas.metrics import METRICS_COLUMNS
from triggerless.services.experiment import SWEEP_COLUMNS, load_pairs

FAST = ["--epochs", "3", "--queries", "40", "--eval-inputs", "60", "--repetitions", "1"]


@pytest.fixture
def run_dir(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--output", str(out), *FAST]) == 0
    return out


def test_train_writes_checkpoints_and_config(run_dir):
    assert (run_dir / "rep00" / "clean.ckpt").exists()
    assert (run_dir / "rep00" / "backdoored.ckpt").exists()
    assert (run_dir / "rep00" / "train_report.json").exists()
    config = ExperimentConfig.from_file(str(run_dir / "config.json"))
    assert config.attack.epochs == 3
    assert config.output_dir == str(run_dir)


def test_checkpoints_carry_training_provenance(run_dir):
    _, _, meta = load_checkpoint(run_dir / "rep00" / "backdoored.ckpt")
    assert meta["kind"] == "backdoored"
    assert meta["attack"]["epochs"] == 3
    assert set(meta["attack"]["seeds"]) == {"init", "shuffle", "dropout", "selection"}
    assert meta["attack"]["targets"] == meta["plan"]["targets"]
    assert meta["dataset"]["kind"] == "synthetic"

    (pair,) = load_pairs(run_dir)
    assert pair.attack is not None
    assert pair.attack.epochs == 3
    assert pair.attack.model_dump(mode="json") == meta["attack"]


def test_train_is_byte_identical_on_rerun(run_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["train", "--output", str(again), *FAST]) == 0
    for name in ("clean.ckpt", "backdoored.ckpt"):
        assert (run_dir / "rep00" / name).read_bytes() == (again / "rep00" / name).read_bytes()


def test_evaluate_writes_documented_columns(run_dir, capsys):
    assert main(["evaluate", "--output", str(run_dir), *FAST]) == 0
    metrics = run_dir / "evaluation" / "metrics.csv"
    assert metrics.read_text().splitlines()[0] == ",".join(METRICS_COLUMNS)
    assert (run_dir / "evaluation" / "config.json").exists()
    assert "attack_success_rate" in capsys.readouterr().out
    text = (run_dir / "evaluation" / "metrics.txt").read_text()
    assert text.startswith("repetition 0: 40 queries")
    assert "third_label_fraction" in text

    first = metrics.read_bytes()
    assert main(["evaluate", "--output", str(run_dir), *FAST]) == 0
    assert metrics.read_bytes() == first


def test_evaluate_at_rate_zero_has_no_success(run_dir):
    assert main(["evaluate", "--output", str(run_dir), *FAST, "--rate", "0", "--transcripts"]) == 0
    frame = pd.read_csv(run_dir / "evaluation" / "metrics.csv")
    assert frame.attack_success_rate.tolist() == [0.0]
    assert frame.posterior_similarity.iloc[0] == 1.0
    assert (run_dir / "evaluation" / "transcripts_rep00.csv").exists()


def test_sweep_queries_is_long_form_and_monotone(run_dir, tmp_path):
    out = tmp_path / "sweep"
    args = ["sweep", "--axis", "queries", "--values", "5,10,40", "--run-dir", str(run_dir), "--output", str(out), *FAST]
    assert main(args) == 0
    frame = pd.read_csv(out / "sweep_queries.csv")
    assert list(frame.columns) == SWEEP_COLUMNS
    asr = frame[frame.metric == "attack_success_rate"].sort_values("value")["mean"].tolist()
    assert asr == sorted(asr)
    assert set(frame[frame.metric == "analytic_asr"].value) == {5, 10, 40}


def test_sweep_rejects_bad_axis_values(tmp_path):
    assert main(["sweep", "--axis", "rate", "--values", "1.5", "--output", str(tmp_path), *FAST]) == 1


def test_plan_reports_queries_for_confidence(capsys):
    assert main(["plan", "--rate", "0.001", "--neurons", "1", "--confidence", "0.99"]) == 0
    out = capsys.readouterr().out
    assert "4603" in out


def test_plan_multi_layer(capsys):
    assert main(["plan", "--assign", "0:1:0.1", "--assign", "1:2:0.2", "--monte-carlo", "100000"]) == 0
    assert "0.004" in capsys.readouterr().out


def test_predict_activation_and_dos_demo(run_dir, capsys):
    assert main(["predict-activation", "--widths", "8,6", "--neurons", "2", "--rate", "0.05", "--seed", "3"]) == 0
    assert "activates at query" in capsys.readouterr().out

    ckpt = str(run_dir / "rep00" / "backdoored.ckpt")
    assert main(["dos-demo", "--checkpoint", ckpt, "--rate", "0.01", "--prior-queries", "17"]) == 0
    assert "activated=True" in capsys.readouterr().out


def test_exit_codes(run_dir, tmp_path):
    ckpt = str(run_dir / "rep00" / "backdoored.ckpt")
    assert main(["dos-demo", "--checkpoint", ckpt, "--rate", "0", "--horizon", "100"]) == 3
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["train", "--set", "attack.batch_size=0", "--output", str(tmp_path)]) == 1
    assert main(["train", "--bogus"]) == 1

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"layer_widths": [4, 2]}}))
    assert main(["train", "--config", str(bad)]) == 1
