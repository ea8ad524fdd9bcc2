"""Frame- and feature-context recurrent video super-resolution on numpy."""

from .inference import InferenceSession, super_resolve_video
from .model import (
    LocalOutput,
    ModelConfig,
    RecurrentState,
    init_weights,
    load_weights,
    net_c_forward,
    net_l_forward,
    save_weights,
)
from .tensor import GradientTape, Tensor, backward
from .trainer import Clip, TrainConfig, train

__all__ = [
    "Clip",
    "GradientTape",
    "InferenceSession",
    "LocalOutput",
    "ModelConfig",
    "RecurrentState",
    "Tensor",
    "TrainConfig",
    "backward",
    "init_weights",
    "load_weights",
    "net_c_forward",
    "net_l_forward",
    "save_weights",
    "super_resolve_video",
    "train",
]
