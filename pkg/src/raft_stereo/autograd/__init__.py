from . import functional
from .counters import count_macs, mac_scope
from .gradcheck import check_gradients
from .nn import Module
from .tensor import ContractError, ShapeError, Tensor, backward, no_grad, tape, tensor

__all__ = [
    "ContractError",
    "Module",
    "ShapeError",
    "Tensor",
    "backward",
    "check_gradients",
    "count_macs",
    "functional",
    "mac_scope",
    "no_grad",
    "tape",
    "tensor",
]
