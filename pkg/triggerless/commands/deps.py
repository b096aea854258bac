"""Shared command plumbing: config loading, flag overrides and run directories."""
import argparse
import json
from pathlib import Path
from typing import List, Optional

import structlog

from triggerless.schemas.experiment import ExperimentConfig
from triggerless.utils.files import atomic_write_text

logger = structlog.get_logger(__name__)

CONFIG_FILENAME = "config.json"


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config (JSON); defaults to a synthetic-blobs setup")
    parser.add_argument("--mnist", action="store_true", help="start from the desk-scale MNIST reference config")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field, e.g. --set attack.epochs=50 (repeatable)",
    )
    parser.add_argument("--output", help="run directory (default: config output_dir)")
    parser.add_argument("--repetitions", type=int, help="model pairs per experiment (reference setup: 10)")
    parser.add_argument("--epochs", type=int, help="training epochs (reference setup: 50)")
    parser.add_argument("--queries", type=int, help="queries per input (reference setup: 5000)")
    parser.add_argument("--rate", type=float, help="prediction-time dropout rate (reference setup: 0.001)")
    parser.add_argument("--neurons", type=int, help="target neurons (reference setup: 1)")
    parser.add_argument("--eval-inputs", type=int, help="test inputs queried per model")


def _flag_overrides(args: argparse.Namespace) -> List[str]:
    mapping = {
        "output": "output_dir",
        "repetitions": "evaluation.repetitions",
        "epochs": "attack.epochs",
        "queries": "evaluation.num_queries",
        "rate": "evaluation.inference_rate",
        "neurons": "target_count",
        "eval_inputs": "evaluation.eval_inputs",
    }
    overrides = []
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return overrides


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or built-in default), then --set overrides, then named flags."""
    overrides = list(args.overrides) + _flag_overrides(args)
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    base = ExperimentConfig.mnist_reference() if args.mnist else ExperimentConfig()
    return ExperimentConfig.from_dict(base.model_dump(mode="json"), overrides)


def prepare_run_dir(config: ExperimentConfig, run_dir: Optional[str] = None) -> Path:
    """Create the run directory and copy the exact config into it."""
    out = Path(run_dir or config.output_dir)
    atomic_write_text(out / CONFIG_FILENAME, config.to_json())
    logger.info("run_dir_ready", path=str(out))
    return out
