"""Supervised multimodal bitransformer (MMBT) at desk scale, in pure numpy."""

from .baselines import BaselineKind, build_model, model_shapes
from .encoders import ImageEncoderConfig, SyntheticImage, Vocabulary, build_vocab, tokenize
from .model import MMBT, MMBTConfig, ModelInput, classify, count_parameters
from .tensor import Tensor, backward, grad_check
from .training import FreezeSchedule, TrainConfig, train
from .transformer import EncoderConfig

__all__ = [
    "BaselineKind",
    "EncoderConfig",
    "FreezeSchedule",
    "ImageEncoderConfig",
    "MMBT",
    "MMBTConfig",
    "ModelInput",
    "SyntheticImage",
    "Tensor",
    "TrainConfig",
    "Vocabulary",
    "backward",
    "build_model",
    "build_vocab",
    "classify",
    "count_parameters",
    "grad_check",
    "model_shapes",
    "tokenize",
    "train",
]
