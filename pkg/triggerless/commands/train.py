import argparse

import structlog

from triggerless.commands.deps import add_config_arguments, load_config, prepare_run_dir
from triggerless.services.experiment import load_datasets, save_pair, train_pair

logger = structlog.get_logger(__name__)


def cmd_train(args: argparse.Namespace) -> int:
    """Train clean/backdoored pairs and write their checkpoints."""
    config = load_config(args)
    run_dir = prepare_run_dir(config, args.output)
    train, _ = load_datasets(config.dataset)

    for rep in range(config.evaluation.repetitions):
        pair = train_pair(config, train, rep)
        out = save_pair(run_dir, pair, config.dataset)
        clean, backdoored = pair.clean_report.final, pair.backdoored_report.final
        print(
            f"✅ rep {rep}: clean acc {clean.train_accuracy:.4f}, "
            f"backdoored acc {backdoored.train_accuracy:.4f}, "
            f"backdoor acc {backdoored.backdoor_accuracy:.4f} -> {out}"
            if clean and backdoored
            else f"✅ rep {rep}: no epochs run -> {out}"
        )
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train clean and backdoored model pairs")
    add_config_arguments(parser)
    parser.set_defaults(handler=cmd_train)
