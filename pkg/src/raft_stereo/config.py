"""Architecture configuration shared by encoders, update operator and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Tuple

from .autograd import ContractError


@dataclass(frozen=True)
class ModelConfig:
    """Every knob that changes the parameter set or the forward computation.

    The defaults follow the full-size model (256-d features, 128-d hidden
    states, three GRU levels at 1/8, 1/16, 1/32). ``toy()`` gives the small
    configuration used for desk-scale training.
    """

    levels: int = 3
    downsample: int = 8
    shared_backbone: bool = False
    feature_dim: int = 256
    widths: Tuple[int, int, int] = (64, 96, 128)
    blocks_per_stage: int = 2
    hidden_dim: int = 128
    motion_dim: int = 0  # 0 -> hidden_dim
    motion_branch_dim: int = 64
    head_dim: int = 256
    context_norm: str = "batch"
    feature_norm: str = "instance"
    corr_radius: int = 4
    corr_levels: int = 4
    corr_normalize: bool = True
    on_the_fly_corr: bool = False

    def __post_init__(self):
        if self.levels not in (1, 2, 3):
            raise ContractError(f"levels must be 1, 2 or 3, got {self.levels}")
        if self.downsample not in (4, 8):
            raise ContractError(f"downsample must be 4 or 8, got {self.downsample}")
        if len(self.widths) != 3:
            raise ContractError("widths needs three stage widths")
        if self.context_norm not in ("batch", "instance", "none") or self.feature_norm not in ("batch", "instance", "none"):
            raise ContractError("norms must be 'batch', 'instance' or 'none'")

    @property
    def motion_channels(self) -> int:
        return self.motion_dim or self.hidden_dim

    @property
    def corr_channels(self) -> int:
        return self.corr_levels * (2 * self.corr_radius + 1)

    @property
    def divisor(self) -> int:
        """Input extents must be multiples of this for the coarsest GRU grid."""
        return self.downsample * 2 ** (self.levels - 1)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(feature_dim=64, widths=(32, 48, 64), blocks_per_stage=1, hidden_dim=32,
                    motion_branch_dim=32, head_dim=64)
        base.update(overrides)
        return cls(**base)

    # ------------------------------------------------------------ serialise
    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)

    def diff(self, other: "ModelConfig") -> dict:
        a, b = self.to_dict(), other.to_dict()
        return {k: (a[k], b[k]) for k in a if a[k] != b[k]}
