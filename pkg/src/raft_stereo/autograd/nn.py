"""Minimal layer/module system on top of the autograd tensors."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .tensor import ContractError, ShapeError, Tensor


def Parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


class Module:
    """Container with named parameters, buffers and submodules.

    Attribute assignment registers parameters (tensors requiring grad),
    submodules and lists of submodules, much like the usual deep-learning
    frameworks.
    """

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            value = ModuleList(value)
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # ---------------------------------------------------------- traversal
    def named_modules(self, prefix: str = "") -> Iterator:
        yield prefix, self
        for name, mod in self._modules.items():
            yield from mod.named_modules(f"{prefix}{name}.")

    def named_parameters(self) -> Iterator:
        for prefix, mod in self.named_modules():
            for name, p in mod._params.items():
                yield f"{prefix}{name}", p

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Convert parameters and buffers in place (e.g. to float64 for gradient checks)."""
        for _, mod in self.named_modules():
            for p in mod._params.values():
                p.data = p.data.astype(dtype)
            for name, b in list(mod._buffers.items()):
                nb = b.astype(dtype)
                mod._buffers[name] = nb
                object.__setattr__(mod, name, nb)
        return self

    # -------------------------------------------------------------- state
    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for prefix, mod in self.named_modules():
            for name, p in mod._params.items():
                state[f"{prefix}{name}"] = p.data
            for name, b in mod._buffers.items():
                state[f"{prefix}{name}"] = b
        return state

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for prefix, mod in self.named_modules():
            for name, p in mod._params.items():
                p.data = _checked(state[f"{prefix}{name}"], p.data, f"{prefix}{name}")
            for name, b in list(mod._buffers.items()):
                b[...] = _checked(state[f"{prefix}{name}"], b, f"{prefix}{name}")


def _checked(new, old: np.ndarray, name: str) -> np.ndarray:
    new = np.asarray(new)
    if new.shape != old.shape:
        raise ShapeError(f"tensor {name!r}: shape {new.shape} does not match expected {old.shape}")
    return new.astype(old.dtype).copy()


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        object.__setattr__(self, "_items", list(modules))
        for i, m in enumerate(self._items):
            self._modules[str(i)] = m

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Sequential(ModuleList):
    def forward(self, x):
        for m in self._items:
            x = m(x)
        return x


class Conv2d(Module):
    """Convolution with fan-in scaled uniform weights and zero bias."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: Optional[int] = None, bias: bool = True, gain: float = np.sqrt(2.0)):
        super().__init__()
        if kernel % 2 == 0:
            raise ContractError(f"kernel size must be odd, got {kernel}")
        fan_in = cin * kernel * kernel
        bound = gain * np.sqrt(3.0 / fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(cout, cin, kernel, kernel)))
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.in_channels, self.out_channels, self.kernel = cin, cout, kernel

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ReLU(Module):
    def forward(self, x):
        return F.relu(x)


class InstanceNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps

    def forward(self, x):
        return F.instance_norm(x, self.eps)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return F.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class Identity(Module):
    def forward(self, x):
        return x


def make_norm(kind: str, channels: int) -> Module:
    if kind == "instance":
        return InstanceNorm2d(channels)
    if kind == "batch":
        return BatchNorm2d(channels)
    if kind == "none":
        return Identity()
    raise ContractError(f"unknown norm {kind!r}")
