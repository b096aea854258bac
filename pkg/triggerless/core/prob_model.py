"""Analytic backdoor activation probabilities and their Monte-Carlo check.

One query activates the backdoor when every target neuron is dropped. Masks
are independent across queries, so the first activation is geometric in the
number of queries.
"""
import math
from typing import Tuple

import numpy as np
import structlog
from scipy import stats

from triggerless.core.exceptions import ContractViolation
from triggerless.schemas.attack import TargetAssignment
from triggerless.schemas.metrics import MonteCarloResult

logger = structlog.get_logger(__name__)

MIN_TRIALS = 1000


def _check_probability(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ContractViolation(f"probability {p} must lie in (0, 1)")


def activation_prob_single(rate: float, n: int) -> float:
    """Chance that one mask drops ``n`` given neurons of a layer at ``rate``."""
    if not 0.0 < rate < 1.0:
        raise ContractViolation(f"dropout rate {rate} must lie in (0, 1)")
    if n < 1:
        raise ContractViolation("at least one target neuron is required")
    return rate ** n


def activation_prob_multi(assignment: TargetAssignment) -> float:
    """Product of the per-layer activation probabilities."""
    return math.prod(activation_prob_single(layer.rate, layer.count) for layer in assignment.layers)


def success_prob_in_q(p: float, q: int) -> float:
    """Chance of at least one activation within ``q`` queries."""
    _check_probability(p)
    if q < 1:
        raise ContractViolation("query count must be >= 1")
    # -expm1(q * log1p(-p)) == 1 - (1 - p)^q without cancellation for tiny p
    return float(-math.expm1(q * math.log1p(-p)))


def expected_queries(p: float) -> float:
    _check_probability(p)
    return 1.0 / p


def queries_for_confidence(p: float, confidence: float) -> int:
    """Smallest q with ``success_prob_in_q(p, q) >= confidence``."""
    _check_probability(p)
    if not 0.0 <= confidence < 1.0:
        raise ContractViolation(f"confidence {confidence} must lie in [0, 1)")
    if confidence == 0.0:
        return 1
    q = math.ceil(math.log1p(-confidence) / math.log1p(-p))
    return max(1, q)


def binomial_sigma(p: float, trials: int) -> float:
    return math.sqrt(p * (1.0 - p) / trials)


def clopper_pearson(hits: int, trials: int, alpha: float = 0.05) -> Tuple[float, float]:
    """Exact binomial interval; the open ends are clamped to 0 and 1."""
    low, high = stats.beta.ppf([alpha / 2, 1 - alpha / 2], [hits, hits + 1], [trials - hits + 1, trials - hits])
    low = 0.0 if np.isnan(low) else float(low)
    high = 1.0 if np.isnan(high) else float(high)
    return low, high


def _count_hits(rng: np.random.Generator, assignment: TargetAssignment, trials: int) -> int:
    hit = np.ones(trials, dtype=bool)
    for layer in assignment.layers:
        draws = rng.random((trials, layer.count))
        hit &= np.all(draws < layer.rate, axis=1)
    return int(hit.sum())


def monte_carlo_activation(
    assignment: TargetAssignment,
    trials: int,
    seed: int,
    chunk: int = 1_000_000,
) -> MonteCarloResult:
    """Empirical activation frequency over independent target-mask draws.

    Trials are split into partitions of ``chunk``, each with its own spawned
    seed, so the count does not depend on how partitions are scheduled.
    """
    if trials < MIN_TRIALS:
        raise ContractViolation(f"Monte-Carlo needs at least {MIN_TRIALS} trials, got {trials}")
    if not assignment.layers:
        raise ContractViolation("assignment has no target layers")

    sizes = [min(chunk, trials - start) for start in range(0, trials, chunk)]
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    hits = sum(_count_hits(np.random.default_rng(child), assignment, size) for child, size in zip(children, sizes))

    analytic = activation_prob_multi(assignment)
    sigma = binomial_sigma(analytic, trials)
    cp_low, cp_high = clopper_pearson(hits, trials)
    result = MonteCarloResult(
        trials=trials,
        hits=hits,
        frequency=hits / trials,
        analytic=analytic,
        ci_low=max(0.0, analytic - 3 * sigma),
        ci_high=min(1.0, analytic + 3 * sigma),
        cp_low=cp_low,
        cp_high=cp_high,
    )
    logger.debug("monte_carlo_done", trials=trials, hits=hits, analytic=analytic)
    return result


def independence_pvalue(flags: np.ndarray, lag: int = 1) -> float:
    """Chi-square p-value for independence of activation flags ``lag`` queries apart."""
    flags = np.asarray(flags, dtype=bool)
    if flags.size <= lag:
        raise ContractViolation("need more flags than the lag")
    a, b = flags[:-lag], flags[lag:]
    table = np.array([
        [np.sum(~a & ~b), np.sum(~a & b)],
        [np.sum(a & ~b), np.sum(a & b)],
    ])
    if np.any(table.sum(axis=0) == 0) or np.any(table.sum(axis=1) == 0):
        return 1.0
    _, pvalue, _, _ = stats.chi2_contingency(table)
    return float(pvalue)
