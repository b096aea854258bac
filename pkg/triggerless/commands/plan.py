import argparse
from typing import List

from triggerless.config import settings
from triggerless.core.exceptions import ConfigError
from triggerless.core.prob_model import (
    activation_prob_multi,
    expected_queries,
    monte_carlo_activation,
    queries_for_confidence,
    success_prob_in_q,
)
from triggerless.schemas.attack import AssignmentLayer, TargetAssignment


def parse_assignment(args: argparse.Namespace) -> TargetAssignment:
    if not args.assign:
        return TargetAssignment(layers=[AssignmentLayer(layer=0, count=args.neurons, rate=args.rate)])
    layers: List[AssignmentLayer] = []
    for item in args.assign:
        try:
            layer, count, rate = item.split(":")
            layers.append(AssignmentLayer(layer=int(layer), count=int(count), rate=float(rate)))
        except ValueError as e:
            raise ConfigError(f"--assign expects LAYER:COUNT:RATE, got {item!r}") from e
    return TargetAssignment(layers=layers)


def cmd_plan(args: argparse.Namespace) -> int:
    """Print activation probability, expected queries and queries for a confidence."""
    assignment = parse_assignment(args)
    p = activation_prob_multi(assignment)
    print("🎯 target assignment")
    for layer in assignment.layers:
        print(f"  layer {layer.layer}: {layer.count} neuron(s) at rate {layer.rate}")
    print(f"  activation probability per query  {p:.6g}")
    print(f"  expected queries to activation    {expected_queries(p):.6g}")
    print(f"  queries for {args.confidence:.4g} confidence     {queries_for_confidence(p, args.confidence)}")
    for q in (int(v) for v in args.queries.split(",") if v.strip()):
        print(f"  success within {q:<8} queries    {success_prob_in_q(p, q):.4f}")
    if args.monte_carlo:
        result = monte_carlo_activation(assignment, args.monte_carlo, args.seed, settings.monte_carlo_chunk)
        print(
            f"  monte-carlo frequency             {result.frequency:.6g} "
            f"(3σ [{result.ci_low:.6g}, {result.ci_high:.6g}], "
            f"Clopper-Pearson [{result.cp_low:.6g}, {result.cp_high:.6g}]) "
            f"{'✅' if result.within_ci else '❌'}"
        )
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("plan", help="analytic activation planning for a target assignment")
    parser.add_argument("--rate", type=float, default=settings.default_inference_rate)
    parser.add_argument("--neurons", type=int, default=settings.default_target_neurons)
    parser.add_argument(
        "--assign",
        action="append",
        default=[],
        metavar="LAYER:COUNT:RATE",
        help="one target layer; repeat for multi-layer assignments (overrides --rate/--neurons)",
    )
    parser.add_argument("--confidence", type=float, default=0.99)
    parser.add_argument("--queries", default="500,1500,2500,5000", help="query budgets to report")
    parser.add_argument("--monte-carlo", type=int, metavar="TRIALS", help="also validate by simulation")
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(handler=cmd_plan)
