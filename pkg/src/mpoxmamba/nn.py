"""Parameter containers and the layer classes shared by the whole network.

A :class:`Parameter` is a named, optionally trainable tensor; names are dotted
paths assigned when a model is finalized and identify entries in checkpoints.
:class:`Module` gives a torch-like tree: parameter/buffer discovery walks the
attribute dict in insertion order, so construction order fixes both the
checkpoint layout and the RNG consumption order at init time.
"""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .tensor import Array, Tensor, silu


class Parameter(Tensor):
    """A leaf tensor registered in a module tree.

    ``name`` (a dotted path, e.g. ``stage2.block0.fuse.weight``) is unique
    within a model and determines checkpoint identity. Non-trainable
    parameters are excluded from optimizer updates and parameter counts.
    """

    __slots__ = ("name", "trainable")

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = ""
        self.trainable = trainable


class Module:
    """Minimal module tree with named parameters, buffers and train/eval mode."""

    def __init__(self):
        self.training = True

    # -- tree walking ----------------------------------------------------------

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (f"{prefix}{key}", value)
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Array]]:
        buffers = getattr(self, "_buffers", None)
        if buffers:
            for key in buffers:
                yield (f"{prefix}{key}", buffers[key])
        for key, child in self._children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def register_buffer(self, key: str, value: Array) -> Array:
        if not hasattr(self, "_buffers"):
            self._buffers: Dict[str, Array] = {}
        self._buffers[key] = value
        return value

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def finalize_names(self) -> None:
        """Stamp dotted-path names onto parameters; names must be unique."""
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise ConfigError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> Array:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    """Grouped 2-D convolution layer (bias off by default; BN usually follows)."""

    def __init__(self, rng, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 bias: bool = False, dtype=np.float32):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ConfigError(f"conv groups {groups} must divide channels {in_channels}->{out_channels}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        self.weight = Parameter(kaiming_uniform(
            rng, (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias,
                          stride=self.stride, padding=self.padding, groups=self.groups)

    def out_hw(self, h: int, w: int) -> Tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        return ops.conv_output_size(h, k, s, p), ops.conv_output_size(w, k, s, p)

    def macs(self, out_h: int, out_w: int) -> int:
        k = self.kernel_size
        return k * k * (self.in_channels // self.groups) * self.out_channels * out_h * out_w


class BatchNorm2d(Module):
    """Batch normalization with running statistics (momentum 0.1, eps 1e-5)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.running_var = self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm2d(x, self.gamma, self.beta,
                                self.running_mean, self.running_var,
                                training=self.training, momentum=self.momentum, eps=self.eps)


class LayerNorm(Module):
    """Normalization over the trailing channel axis of a sequence."""

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Linear(Module):
    def __init__(self, rng, in_features: int, out_features: int, bias: bool = True, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(kaiming_uniform(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def macs(self) -> int:
        return self.in_features * self.out_features


class ConvBnSiLU(Module):
    """conv -> batch norm -> SiLU, the standard stem/head composite."""

    def __init__(self, rng, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, groups: int = 1, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(rng, in_channels, out_channels, kernel_size,
                           stride=stride, padding=padding, groups=groups, dtype=dtype)
        self.bn = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return silu(self.bn(self.conv(x)))
