"""Segmentation model contract, architecture registry and checkpoints."""

from .backends import (
    BACKEND_ENV,
    ModelBackend,
    SegmentationModel,
    build_model,
    forward,
    get_backend,
    parameter_groups,
    register_backend,
)
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .reference import ReferenceTinyNet
from .spec import (
    PAPER_TRAIN_SIZES,
    ArchitectureSpec,
    DecoderFamily,
    EncoderFamily,
    paper_architectures,
)

__all__ = [
    "BACKEND_ENV",
    "PAPER_TRAIN_SIZES",
    "ArchitectureSpec",
    "DecoderFamily",
    "EncoderFamily",
    "ModelBackend",
    "ReferenceTinyNet",
    "SegmentationModel",
    "build_model",
    "forward",
    "get_backend",
    "load_checkpoint",
    "paper_architectures",
    "parameter_groups",
    "read_checkpoint",
    "register_backend",
    "save_checkpoint",
]
