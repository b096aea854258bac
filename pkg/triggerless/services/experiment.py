"""Experiment runner behind the train, evaluate and sweep commands."""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import structlog

from triggerless.core.exceptions import ConfigError, ContractViolation
from triggerless.core.prob_model import activation_prob_multi, success_prob_in_q
from triggerless.models.checkpoint import load_checkpoint, save_checkpoint
from triggerless.models.network import Parameters
from triggerless.schemas.attack import AttackConfig, DropoutPlan, TargetAssignment, TargetLayer
from triggerless.schemas.experiment import DatasetSource, EvaluationBlock, ExperimentConfig
from triggerless.schemas.metrics import METRICS_COLUMNS, MetricsReport, ModelUtility
from triggerless.schemas.model import ModelSpec, TrainReport
from triggerless.services.datasets import (
    Dataset,
    load_fixture,
    load_mnist_dir,
    subsample,
    synthetic_blobs,
    train_test_split,
)
from triggerless.services.metrics import (
    evaluate_transcripts,
    model_utility,
    model_utility_under_dropout,
    summarize,
)
from triggerless.services.query_engine import Transcript, campaign_over_inputs, export_transcripts
from triggerless.services.trainer import default_targets, train_backdoored, train_clean
from triggerless.utils.files import PathLike, atomic_write_text, write_csv, write_json

logger = structlog.get_logger(__name__)

AXES = ("queries", "neurons", "rate", "layer")
SWEEP_COLUMNS = ["axis", "value", "metric", "mean", "stddev"]
SWEEP_METRICS = [
    "attack_success_rate",
    "label_consistency",
    "posterior_similarity",
    "queries_to_activation_mean",
    "third_label_mean_count",
    "utility_delta",
]
SUMMARY_METRICS = [c for c in METRICS_COLUMNS if c not in ("repetition", "num_queries", "inference_rate")]


@dataclass
class TrainedPair:
    repetition: int
    clean: Parameters
    backdoored: Parameters
    spec: ModelSpec
    # training rates and targets; inference rates are set at evaluation time
    plan: DropoutPlan
    target_label: int
    clean_report: Optional[TrainReport] = None
    backdoored_report: Optional[TrainReport] = None
    # seeds, rates, schedule and targets the pair was trained with
    attack: Optional[AttackConfig] = None


# ==================== DATA ====================

def load_datasets(source: DatasetSource) -> Tuple[Dataset, Dataset]:
    """(train, test) for a dataset source."""
    if source.kind == "synthetic":
        data = synthetic_blobs(source.classes, source.dim, source.samples_per_class, source.spread, source.seed)
        return train_test_split(data, source.test_fraction, source.seed)
    if source.kind == "fixture":
        if not source.fixture_path:
            raise ConfigError("fixture source needs dataset.fixture_path")
        return train_test_split(load_fixture(source.fixture_path), source.test_fraction, source.seed)

    root = source.resolved_mnist_dir()
    if not root:
        raise ConfigError("MNIST source needs dataset.mnist_dir or TLBD_MNIST_DIR")
    train = load_mnist_dir(root, "train")
    test = load_mnist_dir(root, "test")
    if source.train_subset and source.train_subset < len(train):
        train = subsample(train, source.train_subset, source.seed)
    if source.test_subset and source.test_subset < len(test):
        test = subsample(test, source.test_subset, source.seed + 1)
    return train, test


def evaluation_inputs(test: Dataset, block: EvaluationBlock) -> Dataset:
    """The first ``eval_inputs`` test examples."""
    n = min(block.eval_inputs, len(test))
    return Dataset(test.inputs[:n], test.labels[:n], test.num_classes)


# ==================== TRAINING ====================

def attack_for(
    config: ExperimentConfig,
    repetition: int,
    count: Optional[int] = None,
    layer: Optional[int] = None,
) -> AttackConfig:
    """Attack config of one repetition: derived seeds plus its target neurons."""
    seeds = config.seeds_for(repetition)
    targets: List[TargetLayer] = list(config.attack.targets)
    if not targets or count is not None or layer is not None:
        if layer is None:
            layer = targets[0].layer if targets else config.target_layer
        count = config.target_count if count is None else count
        targets = default_targets(config.model, count, seeds.selection, layer)
    attack = config.attack.model_copy(update={"seeds": seeds, "targets": targets})
    try:
        attack.validate_for(config.model)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return attack


def train_pair(
    config: ExperimentConfig,
    train: Dataset,
    repetition: int,
    count: Optional[int] = None,
    layer: Optional[int] = None,
) -> TrainedPair:
    attack = attack_for(config, repetition, count, layer)
    clean, clean_report = train_clean(train, config.model, attack)
    backdoored, backdoored_report = train_backdoored(train, config.model, attack)
    logger.info(
        "pair_trained",
        repetition=repetition,
        targets=[t.model_dump() for t in attack.targets],
        backdoor_batches=backdoored_report.backdoor_batches,
    )
    return TrainedPair(
        repetition=repetition,
        clean=clean,
        backdoored=backdoored,
        spec=config.model,
        plan=attack.plan(config.model),
        target_label=attack.target_label,
        clean_report=clean_report,
        backdoored_report=backdoored_report,
        attack=attack,
    )


def _pair_dir(run_dir: PathLike, repetition: int) -> Path:
    return Path(run_dir) / f"rep{repetition:02d}"


def save_pair(run_dir: PathLike, pair: TrainedPair, source: Optional[DatasetSource] = None) -> Path:
    """Both checkpoints plus the training reports; metadata carries the full training provenance."""
    out = _pair_dir(run_dir, pair.repetition)
    meta = {
        "repetition": pair.repetition,
        "target_label": pair.target_label,
        "plan": pair.plan.model_dump(),
        "attack": pair.attack.model_dump(mode="json") if pair.attack else None,
        "dataset": source.model_dump(mode="json") if source else None,
    }
    save_checkpoint(out / "clean.ckpt", pair.clean, pair.spec, {**meta, "kind": "clean"})
    save_checkpoint(out / "backdoored.ckpt", pair.backdoored, pair.spec, {**meta, "kind": "backdoored"})
    reports = {
        "clean": pair.clean_report.model_dump() if pair.clean_report else None,
        "backdoored": pair.backdoored_report.model_dump() if pair.backdoored_report else None,
    }
    write_json(out / "train_report.json", reports)
    return out


def load_pairs(run_dir: PathLike) -> List[TrainedPair]:
    """Every checkpoint pair under ``run_dir``, ordered by repetition."""
    dirs = sorted(p for p in Path(run_dir).glob("rep*") if (p / "backdoored.ckpt").exists())
    if not dirs:
        raise ConfigError(f"no checkpoint pairs under {run_dir}")
    pairs = []
    for d in dirs:
        backdoored, spec, meta = load_checkpoint(d / "backdoored.ckpt")
        clean, clean_spec, _ = load_checkpoint(d / "clean.ckpt")
        if "plan" not in meta or "target_label" not in meta:
            raise ConfigError(f"{d}: checkpoint metadata lacks the dropout plan or target label")
        if clean_spec != spec:
            raise ConfigError(f"{d}: clean and backdoored checkpoints have different shapes")
        pairs.append(TrainedPair(
            repetition=int(meta.get("repetition", len(pairs))),
            clean=clean,
            backdoored=backdoored,
            spec=spec,
            plan=DropoutPlan.model_validate(meta["plan"]),
            target_label=int(meta["target_label"]),
            attack=AttackConfig.model_validate(meta["attack"]) if meta.get("attack") else None,
        ))
    return pairs


# ==================== EVALUATION ====================

def _master_seed(block: EvaluationBlock, repetition: int) -> int:
    return block.master_seed + 1000 * repetition


def run_campaigns(pair: TrainedPair, inputs: Dataset, plan: DropoutPlan, num_queries: int, block: EvaluationBlock) -> List[Transcript]:
    return campaign_over_inputs(
        pair.backdoored,
        inputs.inputs,
        plan,
        num_queries,
        _master_seed(block, pair.repetition),
    )


def pair_utility(pair: TrainedPair, test: Dataset, block: EvaluationBlock, plan: DropoutPlan) -> ModelUtility:
    utility = model_utility(pair.backdoored, pair.clean, test)
    if block.dropout_utility:
        seed = _master_seed(block, pair.repetition)
        utility.backdoored_accuracy_dropout = model_utility_under_dropout(pair.backdoored, test, plan, seed)
        utility.clean_accuracy_dropout = model_utility_under_dropout(pair.clean, test, plan, seed)
    return utility


def evaluate_pair(
    pair: TrainedPair,
    test: Dataset,
    block: EvaluationBlock,
    plan: Optional[DropoutPlan] = None,
    transcripts: Optional[List[Transcript]] = None,
    utility: Optional[ModelUtility] = None,
) -> Tuple[MetricsReport, List[Transcript]]:
    """Campaigns over the evaluation inputs plus utility on the whole test set."""
    plan = pair.plan.with_inference_rate(block.inference_rate) if plan is None else plan
    if transcripts is None:
        transcripts = run_campaigns(pair, evaluation_inputs(test, block), plan, block.num_queries, block)

    if utility is None:
        utility = pair_utility(pair, test, block, plan)

    report = evaluate_transcripts(
        transcripts,
        pair.target_label,
        inference_rate=max(plan.inference_rates, default=0.0),
        utility=utility,
        eligibility_filter=block.eligibility_filter,
        repetition=pair.repetition,
    )
    return report, transcripts


def evaluate_run(pairs: List[TrainedPair], test: Dataset, block: EvaluationBlock, out_dir: Optional[PathLike] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Per-repetition metrics and their mean/stddev summary."""
    reports = []
    for pair in pairs:
        report, transcripts = evaluate_pair(pair, test, block)
        reports.append(report)
        if out_dir is not None and block.export_transcripts:
            export_transcripts(Path(out_dir) / f"transcripts_rep{pair.repetition:02d}.csv", transcripts)

    rows = [r.row() for r in reports]
    per_rep = pd.DataFrame(rows, columns=METRICS_COLUMNS)
    summary = pd.DataFrame([s.model_dump() for s in summarize(rows, SUMMARY_METRICS)])
    if out_dir is not None:
        write_csv(Path(out_dir) / "metrics.csv", per_rep)
        write_csv(Path(out_dir) / "metrics_summary.csv", summary)
        atomic_write_text(Path(out_dir) / "metrics.txt", "\n\n".join(r.to_text() for r in reports) + "\n")
    return per_rep, summary


# ==================== SWEEPS ====================

def analytic_asr(plan: DropoutPlan, num_queries: int) -> Optional[float]:
    """Geometric-model success chance within ``num_queries``; None when a target layer is unarmed."""
    if not plan.armed:
        return None
    assignment = TargetAssignment.from_plan(plan)
    if not assignment.layers:
        return None
    return success_prob_in_q(activation_prob_multi(assignment), num_queries)


def _point_rows(axis: str, value, reports: List[MetricsReport], analytic: Optional[float]) -> List[Dict]:
    rows = []
    for s in summarize([r.row() for r in reports], SWEEP_METRICS):
        rows.append({"axis": axis, "value": value, "metric": s.metric, "mean": s.mean, "stddev": s.stddev})
    if analytic is not None:
        rows.append({"axis": axis, "value": value, "metric": "analytic_asr", "mean": analytic, "stddev": 0.0})
    logger.info(
        "sweep_point",
        axis=axis,
        value=value,
        asr=next((r["mean"] for r in rows if r["metric"] == "attack_success_rate"), None),
        analytic=analytic,
    )
    return rows


def target_layer(config: ExperimentConfig) -> int:
    if config.target_layer is not None:
        return config.target_layer
    if config.attack.targets:
        return config.attack.targets[0].layer
    return config.model.second_to_last


def _check_axis(axis: str, values: Sequence, config: ExperimentConfig) -> None:
    spec = config.model
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")
    if not values:
        raise ConfigError("a sweep needs at least one value")
    if axis in ("queries", "neurons") and any(int(v) < 1 for v in values):
        raise ConfigError(f"{axis} values must be >= 1")
    if axis == "rate" and any(not 0.0 <= float(v) < 1.0 for v in values):
        raise ConfigError("rate values must lie in [0, 1)")
    if axis == "layer" and any(not 0 <= int(v) < spec.num_hidden for v in values):
        raise ConfigError(f"layer values must be hidden layer indices below {spec.num_hidden}")
    if axis == "neurons":
        layer = target_layer(config)
        if any(int(v) > spec.hidden_widths[layer] for v in values):
            raise ConfigError(f"neuron counts exceed the target layer width {spec.hidden_widths[layer]}")


def run_sweep(
    config: ExperimentConfig,
    axis: str,
    values: Sequence,
    train: Dataset,
    test: Dataset,
    pairs: Optional[List[TrainedPair]] = None,
) -> pd.DataFrame:
    """Long-form rows (axis, value, metric, mean, stddev), one block per value.

    The queries axis truncates one campaign of the largest count; the rate axis
    reuses trained pairs; the neurons and layer axes retrain per value.
    """
    _check_axis(axis, values, config)
    block = config.evaluation
    reps = range(block.repetitions)
    rows: List[Dict] = []

    if axis in ("queries", "rate") and pairs is None:
        pairs = [train_pair(config, train, rep) for rep in reps]

    if axis == "queries":
        counts = [int(v) for v in values]
        longest = max(counts)
        inputs = evaluation_inputs(test, block)
        runs = []
        for pair in pairs:
            plan = pair.plan.with_inference_rate(block.inference_rate)
            transcripts = run_campaigns(pair, inputs, plan, longest, block)
            runs.append((pair, plan, transcripts, pair_utility(pair, test, block, plan)))
        for q in counts:
            reports = [
                evaluate_pair(pair, test, block, plan, [t.truncate(q) for t in transcripts], utility)[0]
                for pair, plan, transcripts, utility in runs
            ]
            rows += _point_rows(axis, q, reports, analytic_asr(runs[0][1], q))

    elif axis == "rate":
        for rate in values:
            rate = float(rate)
            plans = [pair.plan.with_inference_rate(rate) for pair in pairs]
            reports = [evaluate_pair(pair, test, block, plan)[0] for pair, plan in zip(pairs, plans)]
            rows += _point_rows(axis, rate, reports, analytic_asr(plans[0], block.num_queries))

    else:
        for value in values:
            value = int(value)
            kwargs = {"count": value} if axis == "neurons" else {"layer": value}
            if axis == "neurons":
                kwargs["layer"] = target_layer(config)
            reports, plan = [], None
            for rep in reps:
                pair = train_pair(config, train, rep, **kwargs)
                plan = pair.plan.with_inference_rate(block.inference_rate)
                reports.append(evaluate_pair(pair, test, block, plan)[0])
            rows += _point_rows(axis, value, reports, analytic_asr(plan, block.num_queries))

    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def parse_axis_values(axis: str, raw: str) -> List:
    """Comma-separated values, or ``start:stop:step`` for an inclusive integer range."""
    try:
        if ":" in raw:
            start, stop, step = (int(x) for x in raw.split(":"))
            if step < 1:
                raise ContractViolation("range step must be >= 1")
            return list(range(start, stop + 1, step))
        cast = float if axis == "rate" else int
        return [cast(v) for v in raw.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse {axis} values {raw!r}: {e}") from e
