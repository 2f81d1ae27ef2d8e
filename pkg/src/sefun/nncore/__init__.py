"""Minimal numpy neural-network substrate with manual backpropagation."""
from .gradcheck import GradCheckResult, finite_difference_check
from .layers import (
    Attention,
    BiGRU,
    CNNEncoder,
    Embedding,
    EmptySequence,
    GRUCell,
    Linear,
    NonFiniteInput,
    cross_entropy,
    softmax,
    softmax_xent,
)
from .modelfile import ModelFormatError, load_model, save_model
from .params import (
    ParameterSet,
    ShapeMismatch,
    TrainConfig,
    adam_step,
    clip_gradients,
    global_norm,
    init_uniform,
)

__all__ = [
    "Attention", "BiGRU", "CNNEncoder", "Embedding", "EmptySequence", "GRUCell", "Linear",
    "NonFiniteInput", "cross_entropy", "softmax", "softmax_xent", "GradCheckResult",
    "finite_difference_check", "ModelFormatError", "load_model", "save_model", "ParameterSet",
    "ShapeMismatch", "TrainConfig", "adam_step", "clip_gradients", "global_norm", "init_uniform",
]
