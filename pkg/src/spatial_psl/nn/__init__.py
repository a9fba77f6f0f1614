"""Toy relational network, attention and distillation training."""

from .features import QADataset, encode_questions, extract_object_features
from .losses import DistillConfig, cross_entropy, distill_loss, effective_pi
from .model import ModelSpec, RNModel, attention_forward, backward, forward, load_checkpoint, rn_forward, save_checkpoint
from .optim import SGD, Adam

__all__ = [
    "Adam",
    "DistillConfig",
    "ModelSpec",
    "QADataset",
    "RNModel",
    "SGD",
    "attention_forward",
    "backward",
    "cross_entropy",
    "distill_loss",
    "effective_pi",
    "encode_questions",
    "extract_object_features",
    "forward",
    "load_checkpoint",
    "rn_forward",
    "save_checkpoint",
]
