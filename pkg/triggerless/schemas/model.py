from typing import List, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator


class ModelSpec(BaseModel):
    """MLP architecture: input width, hidden widths..., class count.

    Hidden layers use ReLU, the output layer softmax. Hidden layers are indexed
    from 0, so the second-to-last layer of the network is ``num_hidden - 1``.
    """
    model_config = ConfigDict(frozen=True)

    layer_widths: List[int]

    @field_validator("layer_widths")
    @classmethod
    def check_widths(cls, widths: List[int]) -> List[int]:
        if len(widths) < 3:
            raise ValueError("at least one hidden layer is required")
        if any(w < 1 for w in widths):
            raise ValueError("all layer widths must be >= 1")
        return widths

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def hidden_widths(self) -> List[int]:
        return self.layer_widths[1:-1]

    @property
    def num_hidden(self) -> int:
        return len(self.layer_widths) - 2

    @property
    def second_to_last(self) -> int:
        """Hidden index of the layer feeding the output layer."""
        return self.num_hidden - 1

    @classmethod
    def mnist_reference(cls) -> "ModelSpec":
        return cls(layer_widths=[784, 256, 128, 10])


class EpochStats(BaseModel):
    epoch: int
    learning_rate: float
    train_loss: float
    train_accuracy: float
    backdoor_accuracy: Optional[float] = None
    backdoor_batches: int = 0


class TrainReport(BaseModel):
    kind: str = "clean"
    epochs: List[EpochStats] = Field(default_factory=list)
    backdoor_batches: int = 0
    total_batches: int = 0

    @property
    def final(self) -> Optional[EpochStats]:
        return self.epochs[-1] if self.epochs else None
