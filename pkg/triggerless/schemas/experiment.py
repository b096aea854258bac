import json
from typing import Any, Dict, List, Literal, Optional
from pydantic import BaseModel, Field, model_validator

from triggerless.config import settings
from triggerless.core.exceptions import ConfigError
from triggerless.schemas.attack import AttackConfig, Seeds
from triggerless.schemas.model import ModelSpec
from triggerless.utils.files import read_bytes


class DatasetSource(BaseModel):
    kind: Literal["mnist", "synthetic", "fixture"] = "synthetic"

    # mnist
    mnist_dir: Optional[str] = None
    train_subset: Optional[int] = Field(default=None, ge=1)
    test_subset: Optional[int] = Field(default=None, ge=1)

    # synthetic
    classes: int = Field(default=4, ge=2)
    dim: int = Field(default=16, ge=1)
    samples_per_class: int = Field(default=150, ge=1)
    spread: float = Field(default=0.05, ge=0.0)
    test_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)

    # fixture: structured-text dataset written by save_fixture, split like synthetic
    fixture_path: Optional[str] = None

    seed: int = 0

    def resolved_mnist_dir(self) -> Optional[str]:
        return self.mnist_dir or settings.mnist_dir


class EvaluationBlock(BaseModel):
    num_queries: int = Field(default_factory=lambda: settings.default_num_queries, ge=1)
    inference_rate: float = Field(default_factory=lambda: settings.default_inference_rate, ge=0.0, lt=1.0)
    eval_inputs: int = Field(default=500, ge=1)
    repetitions: int = Field(default=1, ge=1)
    master_seed: int = Field(default=7, ge=0)
    # exclude inputs whose clean prediction is already the target label
    eligibility_filter: bool = True
    dropout_utility: bool = True
    export_transcripts: bool = False


class ExperimentConfig(BaseModel):
    """Everything one run needs; copied into the run directory as ``config.json``."""
    dataset: DatasetSource = Field(default_factory=DatasetSource)
    model: ModelSpec = Field(default_factory=lambda: ModelSpec(layer_widths=[16, 32, 16, 4]))
    attack: AttackConfig = Field(default_factory=AttackConfig)
    evaluation: EvaluationBlock = Field(default_factory=EvaluationBlock)
    # used when attack.targets is empty: neurons picked per repetition
    target_count: int = Field(default_factory=lambda: settings.default_target_neurons, ge=1)
    target_layer: Optional[int] = None
    output_dir: str = Field(default_factory=lambda: settings.output_root)

    @model_validator(mode="after")
    def check_fits(self) -> "ExperimentConfig":
        self.attack.validate_for(self.model)
        if self.target_layer is not None and self.target_layer >= self.model.num_hidden:
            raise ValueError(f"target layer {self.target_layer} is not a hidden layer")
        return self

    def seeds_for(self, repetition: int) -> Seeds:
        return self.attack.seeds.derive(repetition)

    @classmethod
    def mnist_reference(cls, mnist_dir: Optional[str] = None) -> "ExperimentConfig":
        """The desk-scale MNIST setup: 10k training subset, 784-256-128-10."""
        return cls(
            dataset=DatasetSource(kind="mnist", mnist_dir=mnist_dir, train_subset=settings.desk_mnist_subset),
            model=ModelSpec.mnist_reference(),
            attack=AttackConfig(
                epochs=settings.desk_epochs,
                batch_size=settings.desk_batch_size,
                learning_rate=settings.desk_learning_rate,
                train_dropout_rate=settings.default_train_dropout_rate,
                inference_dropout_rate=settings.default_inference_rate,
            ),
        )

    @classmethod
    def from_file(cls, path: str, overrides: Optional[List[str]] = None) -> "ExperimentConfig":
        try:
            data = json.loads(read_bytes(path).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(f"{path}: not a JSON config ({e})") from e
        return cls.from_dict(data, overrides)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], overrides: Optional[List[str]] = None) -> "ExperimentConfig":
        data = json.loads(json.dumps(data))
        for item in overrides or []:
            apply_override(data, item)
        return cls.model_validate(data)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def apply_override(data: Dict[str, Any], item: str) -> None:
    """Apply ``section.field=value`` in place; the value is parsed as JSON when it parses."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r} descends into a non-object field")
    node[parts[-1]] = value
