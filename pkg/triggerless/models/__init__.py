from triggerless.models.network import (
    ForwardTrace,
    Gradients,
    Parameters,
    backward,
    forward,
    init_params,
    loss,
    predict_labels,
    sgd_step,
)
from triggerless.models.checkpoint import (
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "ForwardTrace",
    "Gradients",
    "Parameters",
    "backward",
    "forward",
    "init_params",
    "loss",
    "predict_labels",
    "sgd_step",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
]
