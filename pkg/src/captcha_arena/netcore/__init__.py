"""Minimal NumPy CNN engine with parameter and input gradients."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import softmax
from .model import (LOG_FLOOR, LayerSpec, Model, ModelConfig, backward, batchnorm, conv, dense,
                    desk_model_config, forward, forward_backward, loss_ce, maxpool,
                    full_model_config, relu)
from .optim import Adam, TrainConfig, adam_step
from .training import (AccuracyReport, accuracy_from_predictions, evaluate, predict_labels,
                       predict_proba, train, write_loss_curve)

__all__ = [
    "AccuracyReport", "Adam", "LOG_FLOOR", "LayerSpec", "Model", "ModelConfig", "TrainConfig",
    "accuracy_from_predictions", "adam_step", "backward", "batchnorm", "conv", "dense",
    "desk_model_config", "evaluate", "forward", "forward_backward", "load_checkpoint", "loss_ce",
    "maxpool", "full_model_config", "predict_labels", "predict_proba", "relu",
    "save_checkpoint", "softmax", "train", "write_loss_curve",
]
