"""Recurrent regressor mapping (prompt embedding, timestep) to metric scores."""

from .model import (
    DirectionParams,
    ModelConfig,
    PredictorParams,
    forward,
    init_params,
    position_embedding,
    position_matrix,
)
from .training import TrainingExample, backward, batch_loss, loss, train
from .checkpoint import (
    EpochStats,
    PredictorCheckpoint,
    load_checkpoint,
    predict_series,
    save_checkpoint,
    write_training_log,
)

__all__ = [
    "DirectionParams",
    "ModelConfig",
    "PredictorParams",
    "forward",
    "init_params",
    "position_embedding",
    "position_matrix",
    "TrainingExample",
    "backward",
    "batch_loss",
    "loss",
    "train",
    "EpochStats",
    "PredictorCheckpoint",
    "load_checkpoint",
    "predict_series",
    "save_checkpoint",
    "write_training_log",
]
