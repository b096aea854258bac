from typing import Dict, List, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from triggerless.schemas.model import ModelSpec


# ==================== TARGETS ====================

class TargetLayer(BaseModel):
    """Target neurons of one hidden layer."""
    model_config = ConfigDict(frozen=True)

    layer: int = Field(ge=0)
    neurons: List[int] = Field(default_factory=list)

    @field_validator("neurons")
    @classmethod
    def check_neurons(cls, neurons: List[int]) -> List[int]:
        if len(set(neurons)) != len(neurons):
            raise ValueError(f"duplicate target neurons: {neurons}")
        if any(n < 0 for n in neurons):
            raise ValueError("target neuron indices must be >= 0")
        return neurons


def check_targets_fit(widths: List[int], targets: List[TargetLayer]) -> None:
    """Raise ValueError when a target assignment does not fit the hidden widths."""
    seen = set()
    for target in targets:
        if target.layer >= len(widths):
            raise ValueError(
                f"target layer {target.layer} is not one of {len(widths)} hidden layers"
            )
        if target.layer in seen:
            raise ValueError(f"target layer {target.layer} listed twice")
        seen.add(target.layer)
        width = widths[target.layer]
        bad = [n for n in target.neurons if n >= width]
        if bad:
            raise ValueError(f"target neurons {bad} out of range for width {width}")


# ==================== DROPOUT PLAN ====================

class DropoutPlan(BaseModel):
    """Per-hidden-layer dropout rates for both phases plus target assignments.

    ``widths`` are the hidden layer widths; they fix how many draws each
    prediction-time mask consumes.
    """
    model_config = ConfigDict(frozen=True)

    widths: List[int]
    train_rates: List[float]
    inference_rates: List[float]
    targets: List[TargetLayer] = Field(default_factory=list)

    @field_validator("train_rates", "inference_rates")
    @classmethod
    def check_rates(cls, rates: List[float]) -> List[float]:
        for rate in rates:
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate {rate} must lie in [0, 1)")
        return rates

    @model_validator(mode="after")
    def check_lengths(self) -> "DropoutPlan":
        if not len(self.widths) == len(self.train_rates) == len(self.inference_rates):
            raise ValueError("widths, train and inference rates must cover the same layers")
        check_targets_fit(self.widths, self.targets)
        return self

    @property
    def num_layers(self) -> int:
        return len(self.inference_rates)

    @property
    def armed(self) -> bool:
        """True when every target layer has a positive inference rate."""
        return all(self.inference_rates[t.layer] > 0 for t in self.targets)

    def inference_layers(self) -> List[int]:
        """Layers drawing a mask at prediction time, in draw order."""
        return [i for i, rate in enumerate(self.inference_rates) if rate > 0]

    def draws_per_query(self) -> int:
        return sum(self.widths[i] for i in self.inference_layers())

    def target_map(self) -> Dict[int, List[int]]:
        return {t.layer: list(t.neurons) for t in self.targets}

    def with_inference_rate(self, rate: float, layers: Optional[List[int]] = None) -> "DropoutPlan":
        """Copy with ``rate`` on ``layers`` (default: layers trained with dropout, plus target layers)."""
        if layers is None:
            layers = [i for i, r in enumerate(self.train_rates) if r > 0]
            layers += [t.layer for t in self.targets if t.layer not in layers]
        rates = list(self.inference_rates)
        for layer in layers:
            rates[layer] = rate
        return DropoutPlan(**{**self.model_dump(), "inference_rates": rates})

    def with_targets(self, targets: List[TargetLayer]) -> "DropoutPlan":
        return DropoutPlan(**{**self.model_dump(), "targets": [t.model_dump() for t in targets]})

    def validate_for(self, spec: ModelSpec) -> None:
        if self.widths != spec.hidden_widths:
            raise ValueError(
                f"plan covers hidden widths {self.widths}, model has {spec.hidden_widths}"
            )


# ==================== ATTACK CONFIG ====================

class Seeds(BaseModel):
    model_config = ConfigDict(frozen=True)

    init: int = 0
    shuffle: int = 1
    dropout: int = 2
    selection: int = 3

    def derive(self, repetition: int) -> "Seeds":
        """Seeds of repetition ``repetition``; repetition 0 keeps the base seeds."""
        step = 1000 * repetition
        return Seeds(
            init=self.init + step,
            shuffle=self.shuffle + step,
            dropout=self.dropout + step,
            selection=self.selection + step,
        )


class AttackConfig(BaseModel):
    target_label: int = Field(default=0, ge=0)
    targets: List[TargetLayer] = Field(default_factory=list)
    backdoor_batch_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    train_dropout_rate: float = Field(default=0.5, ge=0.0, lt=1.0)
    inference_dropout_rate: float = Field(default=0.001, ge=0.0, lt=1.0)
    # None means every hidden layer
    dropout_layers: Optional[List[int]] = None
    protect_targets: bool = True
    # with protect_targets: hinge holding target pre-activations above the margin
    target_margin: float = Field(default=1.0, ge=0.0)
    target_margin_weight: float = Field(default=1.0, ge=0.0)
    epochs: int = Field(default=10, ge=0)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=0.1, ge=0.0)
    lr_decay_every: int = Field(default=10, ge=1)
    lr_decay_factor: float = Field(default=0.5, gt=0.0)
    seeds: Seeds = Field(default_factory=Seeds)

    def validate_for(self, spec: ModelSpec) -> None:
        if self.target_label >= spec.num_classes:
            raise ValueError(
                f"target label {self.target_label} out of range for {spec.num_classes} classes"
            )
        check_targets_fit(spec.hidden_widths, self.targets)
        for layer in self.dropout_layers or []:
            if layer >= spec.num_hidden:
                raise ValueError(f"dropout layer {layer} is not a hidden layer")

    def plan(self, spec: ModelSpec, inference_rate: Optional[float] = None) -> DropoutPlan:
        """Dropout plan for ``spec``; target layers always get dropout."""
        enabled = set(range(spec.num_hidden)) if self.dropout_layers is None else set(self.dropout_layers)
        enabled |= {t.layer for t in self.targets}
        rate = self.inference_dropout_rate if inference_rate is None else inference_rate
        return DropoutPlan(
            widths=spec.hidden_widths,
            train_rates=[self.train_dropout_rate if i in enabled else 0.0 for i in range(spec.num_hidden)],
            inference_rates=[rate if i in enabled else 0.0 for i in range(spec.num_hidden)],
            targets=self.targets,
        )


# ==================== PROBABILITY MODEL ====================

class AssignmentLayer(BaseModel):
    model_config = ConfigDict(frozen=True)

    layer: int = 0
    count: int = Field(ge=1)
    rate: float = Field(gt=0.0, lt=1.0)


class TargetAssignment(BaseModel):
    """(layer, neuron count, inference rate) per target layer."""
    model_config = ConfigDict(frozen=True)

    layers: List[AssignmentLayer]

    @classmethod
    def from_plan(cls, plan: DropoutPlan) -> "TargetAssignment":
        return cls(layers=[
            AssignmentLayer(layer=t.layer, count=len(t.neurons), rate=plan.inference_rates[t.layer])
            for t in plan.targets
            if t.neurons
        ])
