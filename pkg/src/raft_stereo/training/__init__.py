from .augment import AugmentConfig, augment
from .loop import NonFiniteLossError, TrainConfig, TrainResult, train, validate
from .loss import LossConfig, sequence_loss, sequence_weights
from .optim import AdamW, LRConfig, clip_grad_norm, one_cycle_lr
from .synthetic import SyntheticConfig, SyntheticSample, SyntheticStream, generate_synthetic, make_dataset

__all__ = [
    "AugmentConfig", "augment", "NonFiniteLossError", "TrainConfig", "TrainResult", "train", "validate",
    "LossConfig", "sequence_loss", "sequence_weights", "AdamW", "LRConfig", "clip_grad_norm", "one_cycle_lr",
    "SyntheticConfig", "SyntheticSample", "SyntheticStream", "generate_synthetic", "make_dataset",
]
