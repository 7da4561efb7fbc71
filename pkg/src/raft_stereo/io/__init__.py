from .checkpoint import (
    Checkpoint,
    CheckpointError,
    ChecksumError,
    ConfigConflictError,
    TensorShapeError,
    VersionMismatchError,
    load_checkpoint,
    load_model,
    save_checkpoint,
)
from .images import colorize, read_image, write_disparity_png, write_image
from .pfm import PFMError, read_pfm, write_pfm

__all__ = [
    "Checkpoint", "CheckpointError", "ChecksumError", "ConfigConflictError", "TensorShapeError",
    "VersionMismatchError", "load_checkpoint", "load_model", "save_checkpoint",
    "colorize", "read_image", "write_disparity_png", "write_image",
    "PFMError", "read_pfm", "write_pfm",
]
