from typing import List, Optional
from pydantic import BaseModel, Field


class QueriesToActivation(BaseModel):
    """First target-label query index over inputs that reached one."""
    count: int = 0
    mean: Optional[float] = None
    median: Optional[float] = None
    histogram_counts: List[int] = Field(default_factory=list)
    histogram_edges: List[float] = Field(default_factory=list)


class ModelUtility(BaseModel):
    backdoored_accuracy: float
    clean_accuracy: float
    # clean minus backdoored; positive when the backdoor costs accuracy
    delta: float
    backdoored_accuracy_dropout: Optional[float] = None
    clean_accuracy_dropout: Optional[float] = None


# Stable CSV column order of MetricsReport.row()
METRICS_COLUMNS = [
    "repetition",
    "num_queries",
    "inference_rate",
    "eligible_inputs",
    "attack_success_rate",
    "backdoored_accuracy",
    "clean_accuracy",
    "utility_delta",
    "backdoored_accuracy_dropout",
    "clean_accuracy_dropout",
    "label_consistency",
    "posterior_similarity",
    "queries_to_activation_count",
    "queries_to_activation_mean",
    "queries_to_activation_median",
    "third_label_mean_count",
    "third_label_fraction",
    "activation_reliability",
]


class MetricsReport(BaseModel):
    repetition: int = 0
    num_queries: int
    inference_rate: float
    eligible_inputs: int
    attack_success_rate: float = Field(ge=0.0, le=1.0)
    utility: Optional[ModelUtility] = None
    label_consistency: float = Field(ge=0.0, le=1.0)
    posterior_similarity: Optional[float] = None
    queries_to_activation: QueriesToActivation
    third_label_mean_count: float
    # share of inputs with at least one query off both the modal and target labels
    third_label_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    activation_reliability: Optional[float] = None

    def row(self) -> dict:
        """Flat row keyed by METRICS_COLUMNS."""
        utility = self.utility
        qta = self.queries_to_activation
        values = {
            "repetition": self.repetition,
            "num_queries": self.num_queries,
            "inference_rate": self.inference_rate,
            "eligible_inputs": self.eligible_inputs,
            "attack_success_rate": self.attack_success_rate,
            "backdoored_accuracy": utility.backdoored_accuracy if utility else None,
            "clean_accuracy": utility.clean_accuracy if utility else None,
            "utility_delta": utility.delta if utility else None,
            "backdoored_accuracy_dropout": utility.backdoored_accuracy_dropout if utility else None,
            "clean_accuracy_dropout": utility.clean_accuracy_dropout if utility else None,
            "label_consistency": self.label_consistency,
            "posterior_similarity": self.posterior_similarity,
            "queries_to_activation_count": qta.count,
            "queries_to_activation_mean": qta.mean,
            "queries_to_activation_median": qta.median,
            "third_label_mean_count": self.third_label_mean_count,
            "third_label_fraction": self.third_label_fraction,
            "activation_reliability": self.activation_reliability,
        }
        return {column: values[column] for column in METRICS_COLUMNS}

    def to_text(self) -> str:
        lines = [f"repetition {self.repetition}: {self.num_queries} queries at rate {self.inference_rate}"]
        for column, value in self.row().items():
            if column in ("repetition", "num_queries", "inference_rate"):
                continue
            lines.append(f"  {column:<30} {'-' if value is None else value}")
        if self.queries_to_activation.histogram_counts:
            lines.append(f"  {'queries_to_activation_hist':<30} {self.queries_to_activation.histogram_counts}")
        return "\n".join(lines)


class MetricSummary(BaseModel):
    metric: str
    mean: Optional[float] = None
    stddev: Optional[float] = None
    samples: int = 0


class MonteCarloResult(BaseModel):
    trials: int
    hits: int
    frequency: float
    analytic: float
    # analytic +/- 3 binomial standard deviations
    ci_low: float
    ci_high: float
    # exact Clopper-Pearson interval around the observed frequency
    cp_low: float
    cp_high: float

    @property
    def within_ci(self) -> bool:
        return self.ci_low <= self.frequency <= self.ci_high
