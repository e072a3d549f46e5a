"""Segmental wall-motion scoring from cine short-axis MRI with non-local blocks."""

from .model import ModelConfig, ModelParams, build_model, forward, insert_nl_blocks, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad

__all__ = [
    "ModelConfig",
    "ModelParams",
    "Tensor",
    "build_model",
    "forward",
    "insert_nl_blocks",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
]
__version__ = "0.1.0"
