"""Seed-tracking adversary: offline activation prediction and DoS scheduling."""
import argparse
from typing import Tuple

import numpy as np

from triggerless.config import settings
from triggerless.core.exceptions import ConfigError
from triggerless.models.checkpoint import load_checkpoint
from triggerless.models.network import Parameters
from triggerless.schemas.attack import DropoutPlan, TargetLayer
from triggerless.schemas.experiment import ExperimentConfig
from triggerless.services.experiment import load_datasets
from triggerless.services.query_engine import QuerySession, predict, predict_activation_query, schedule_dos


def _checkpoint_plan(path: str) -> Tuple[Parameters, DropoutPlan, int]:
    params, _, meta = load_checkpoint(path)
    if "plan" not in meta:
        raise ConfigError(f"{path}: checkpoint metadata has no dropout plan")
    return params, DropoutPlan.model_validate(meta["plan"]), int(meta.get("target_label", 0))


def _adhoc_plan(args: argparse.Namespace) -> DropoutPlan:
    try:
        widths = [int(w) for w in args.widths.split(",")]
        neurons = [int(n) for n in args.neurons.split(",") if n.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse widths/neurons: {e}") from e
    layer = len(widths) - 1 if args.target_layer is None else args.target_layer
    return DropoutPlan(
        widths=widths,
        train_rates=[0.0] * len(widths),
        inference_rates=[0.0] * len(widths),
        targets=[TargetLayer(layer=layer, neurons=neurons)],
    )


def cmd_predict_activation(args: argparse.Namespace) -> int:
    plan = _checkpoint_plan(args.checkpoint)[1] if args.checkpoint else _adhoc_plan(args)
    plan = plan.with_inference_rate(args.rate)
    index = predict_activation_query(args.seed, args.stream, plan, None, args.horizon)
    if index is None:
        print(f"❌ no activation within {args.horizon} queries")
    else:
        print(f"🎯 stream {args.stream} of seed {args.seed} activates at query {index}")
    return 0


def _demo_input(args: argparse.Namespace, width: int) -> np.ndarray:
    if not args.config:
        return np.full(width, 0.5)
    _, test = load_datasets(ExperimentConfig.from_file(args.config).dataset)
    if not 0 <= args.input < len(test):
        raise ConfigError(f"input {args.input} out of range for {len(test)} test examples")
    return test.inputs[args.input]


def cmd_dos_demo(args: argparse.Namespace) -> int:
    """Pad a stream to its next activation, then query once."""
    params, plan, target_label = _checkpoint_plan(args.checkpoint)
    plan = plan.with_inference_rate(args.rate)
    x = _demo_input(args, params.layer_widths[0])

    session = QuerySession(args.seed)
    if args.prior_queries:
        session.consume(args.stream, args.prior_queries, plan)
    padding = schedule_dos(session, plan, stream_id=args.stream, horizon=args.horizon)
    record = predict(params, x, plan, session, input_index=args.stream)

    print(f"🛠 padded stream {args.stream} with {padding} throwaway queries")
    print(
        f"🎯 query {record.query_index}: activated={record.activated} "
        f"label={record.label} target={target_label}"
    )
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("predict-activation", help="first activating query of a stream, by replay")
    parser.add_argument("--checkpoint", help="take hidden widths and targets from a checkpoint")
    parser.add_argument("--widths", default="256,128", help="hidden widths when no checkpoint is given")
    parser.add_argument("--target-layer", type=int, help="hidden index of the target layer (default: last)")
    parser.add_argument("--neurons", default="0", help="comma-separated target neuron indices")
    parser.add_argument("--rate", type=float, default=settings.default_inference_rate)
    parser.add_argument("--seed", type=int, default=0, help="model master seed")
    parser.add_argument("--stream", type=int, default=0, help="input stream id")
    parser.add_argument("--horizon", type=int, default=settings.search_horizon)
    parser.set_defaults(handler=cmd_predict_activation)

    parser = subparsers.add_parser("dos-demo", help="schedule the next query of a stream to activate")
    parser.add_argument("--checkpoint", required=True, help="backdoored checkpoint")
    parser.add_argument("--config", help="experiment config whose test set supplies the input")
    parser.add_argument("--input", type=int, default=0, help="test input index")
    parser.add_argument("--rate", type=float, default=settings.default_inference_rate)
    parser.add_argument("--seed", type=int, default=0, help="model master seed")
    parser.add_argument("--stream", type=int, default=0)
    parser.add_argument("--prior-queries", type=int, default=0, help="queries already served on the stream")
    parser.add_argument("--horizon", type=int, default=settings.search_horizon)
    parser.set_defaults(handler=cmd_dos_demo)
