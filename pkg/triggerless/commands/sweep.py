import argparse
from pathlib import Path

from triggerless.commands.deps import add_config_arguments, load_config, prepare_run_dir
from triggerless.services.experiment import AXES, load_datasets, load_pairs, parse_axis_values, run_sweep
from triggerless.utils.files import write_csv


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args)
    values = parse_axis_values(args.axis, args.values)
    train, test = load_datasets(config.dataset)
    pairs = load_pairs(args.run_dir) if args.run_dir and args.axis in ("queries", "rate") else None

    out = prepare_run_dir(config, args.output)
    frame = run_sweep(config, args.axis, values, train, test, pairs)
    path = write_csv(Path(out) / f"sweep_{args.axis}.csv", frame)

    asr = frame[frame.metric == "attack_success_rate"]
    for row in asr.itertuples(index=False):
        print(f"  {args.axis}={row.value:<10} ASR {row.mean:.4f} ± {row.stddev:.4f}")
    print(f"✅ {len(frame)} rows written to {path}")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("sweep", help="one evaluation per value of a hyperparameter")
    add_config_arguments(parser)
    parser.add_argument("--axis", required=True, choices=AXES)
    parser.add_argument(
        "--values",
        required=True,
        help="comma-separated values or start:stop:step, e.g. 500,1500,2500 or 1:10001:500",
    )
    parser.add_argument("--run-dir", help="reuse trained pairs for the queries and rate axes")
    parser.set_defaults(handler=cmd_sweep)
