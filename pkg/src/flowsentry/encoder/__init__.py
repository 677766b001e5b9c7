"""Transformer encoder, classification head, training and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import TransformerFlowClassifier, build_model
from .model import ClassifierHead, EncoderConfig, FlowEncoder, forward, softmax
from .train import TrainConfig, TrainReport, embed, grad_check, inverse_frequency_weights, predict_logits, train

__all__ = [
    "ClassifierHead",
    "EncoderConfig",
    "FlowEncoder",
    "TrainConfig",
    "TrainReport",
    "TransformerFlowClassifier",
    "build_model",
    "embed",
    "forward",
    "grad_check",
    "inverse_frequency_weights",
    "load_checkpoint",
    "predict_logits",
    "save_checkpoint",
    "softmax",
    "train",
]
