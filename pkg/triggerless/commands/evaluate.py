import argparse
from pathlib import Path

from triggerless.commands.deps import add_config_arguments, load_config, prepare_run_dir
from triggerless.services.experiment import evaluate_run, load_datasets, load_pairs


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Query campaigns against trained pairs; writes metrics.csv and metrics_summary.csv."""
    config = load_config(args)
    if args.transcripts:
        config.evaluation.export_transcripts = True
    run_dir = args.run_dir or config.output_dir
    pairs = load_pairs(run_dir)
    _, test = load_datasets(config.dataset)

    out = prepare_run_dir(config, Path(config.output_dir) / "evaluation")
    per_rep, summary = evaluate_run(pairs, test, config.evaluation, out)

    print(f"📊 {len(per_rep)} repetition(s), {config.evaluation.num_queries} queries at rate {config.evaluation.inference_rate}")
    for row in summary.itertuples(index=False):
        if row.mean is None or row.mean != row.mean:
            continue
        print(f"  {row.metric:<30} {row.mean:.6f} ± {row.stddev:.6f}")
    print(f"✅ metrics written to {out}")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="measure attack success, stealth and utility")
    add_config_arguments(parser)
    parser.add_argument("--run-dir", help="directory holding rep*/ checkpoint pairs (default: --output or config output_dir); results go to <output>/evaluation")
    parser.add_argument("--transcripts", action="store_true", help="also export per-query transcripts")
    parser.set_defaults(handler=cmd_evaluate)
