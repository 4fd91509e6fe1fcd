from .net import (
    ModelConfig,
    RadioFillNet,
    build_model,
    count_parameters,
    csi_encoder_input_params,
    segment_csi,
)
from ..errors import CheckpointMismatchError, TrainingDivergedError
from .train import (
    TrainConfig,
    evaluate_model,
    load_checkpoint,
    reconstruction_loss,
    restore_optimizer,
    samples_to_tensors,
    save_checkpoint,
    train_model,
)

__all__ = [
    "ModelConfig",
    "RadioFillNet",
    "build_model",
    "count_parameters",
    "csi_encoder_input_params",
    "segment_csi",
    "TrainConfig",
    "TrainingDivergedError",
    "CheckpointMismatchError",
    "train_model",
    "evaluate_model",
    "reconstruction_loss",
    "restore_optimizer",
    "samples_to_tensors",
    "save_checkpoint",
    "load_checkpoint",
]
