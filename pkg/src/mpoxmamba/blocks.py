"""Composite building blocks of the network.

* Inverted residual block: pointwise expand, depthwise 3x3 (optionally
  strided), pointwise project, shortcut when stride is 1 and channels match.
* Local representation: depthwise-separable convolution that preserves shape.
* Efficient channel attention: global pool, k-wide 1-D convolution across the
  channel axis, sigmoid gate.
* Grouped local-global fusion block: local representation feeding a
  channel-split group of scan layers, attention-adjusted concat fusion, and a
  plain additive shortcut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import BatchNorm2d, Conv2d, Module
from .ops import channel_conv1d, global_avg_pool
from .tensor import Tensor, add, concat, mul, sigmoid, silu
from .vision_mamba import VisionMambaLayer, VmLayerConfig
from .nn import Parameter, kaiming_uniform


def eca_kernel_size(channels: int) -> int:
    """Adaptive attention kernel: nearest odd to (log2 C + 1) / 2, at least 3.

    Ties round up, matching the usual channel-attention convention
    (C=64 -> 3, C=128 -> 5).
    """
    if channels < 1:
        raise ConfigError(f"eca_kernel_size: channels must be >= 1, got {channels}")
    t = int((math.log2(channels) + 1.0) / 2.0)
    k = t if t % 2 else t + 1
    return max(k, 3)


def split_sizes(channels: int, groups: int) -> List[int]:
    """Channel split sizes: as equal as possible, remainder on the last groups.

    Sizes differ by at most one and sum to ``channels``
    (64/4 -> [16,16,16,16]; 64/3 -> [21,21,22]; 128/3 -> [42,43,43]).
    """
    if groups < 1 or channels < groups:
        raise ConfigError(f"split_sizes: need 1 <= groups <= channels, got {groups}, {channels}")
    base, rem = divmod(channels, groups)
    return [base] * (groups - rem) + [base + 1] * rem


@dataclass
class InResConfig:
    in_channels: int
    out_channels: int
    stride: int = 1
    expansion: int = 2

    def validate(self) -> None:
        if self.stride not in (1, 2):
            raise ConfigError(f"InResConfig: stride must be 1 or 2, got {self.stride}")
        if min(self.in_channels, self.out_channels, self.expansion) < 1:
            raise ConfigError(f"InResConfig: channels/expansion must be >= 1, got {self}")

    @property
    def use_residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


class InvertedResidual(Module):
    """expand 1x1 -> BN -> SiLU -> depthwise 3x3 (stride) -> BN -> SiLU -> project 1x1 -> BN.

    The shortcut is only active in the stride-1, equal-channels variant.
    """

    def __init__(self, rng: np.random.Generator, cfg: InResConfig, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        hidden = cfg.in_channels * cfg.expansion
        self.expand = Conv2d(rng, cfg.in_channels, hidden, 1, dtype=dtype)
        self.expand_bn = BatchNorm2d(hidden, dtype=dtype)
        self.depthwise = Conv2d(rng, hidden, hidden, 3, stride=cfg.stride, padding=1,
                                groups=hidden, dtype=dtype)
        self.depthwise_bn = BatchNorm2d(hidden, dtype=dtype)
        self.project = Conv2d(rng, hidden, cfg.out_channels, 1, dtype=dtype)
        self.project_bn = BatchNorm2d(cfg.out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.in_channels:
            raise DimensionError(f"InvertedResidual expects {self.cfg.in_channels} channels, got {x.shape}")
        if x.shape[2] % self.cfg.stride or x.shape[3] % self.cfg.stride:
            raise DimensionError(f"spatial size {x.shape[2:]} not divisible by stride {self.cfg.stride}")
        out = silu(self.expand_bn(self.expand(x)))
        out = silu(self.depthwise_bn(self.depthwise(out)))
        out = self.project_bn(self.project(out))
        return add(out, x) if self.cfg.use_residual else out

    def conv_macs(self, h: int, w: int) -> int:
        ho, wo = h // self.cfg.stride, w // self.cfg.stride
        return (self.expand.macs(h, w) + self.depthwise.macs(ho, wo) + self.project.macs(ho, wo))


class LocalRepresentation(Module):
    """Depthwise 3x3 then pointwise 1x1 (BN + SiLU after each); shape preserving."""

    def __init__(self, rng: np.random.Generator, channels: int, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.depthwise = Conv2d(rng, channels, channels, 3, padding=1, groups=channels, dtype=dtype)
        self.depthwise_bn = BatchNorm2d(channels, dtype=dtype)
        self.pointwise = Conv2d(rng, channels, channels, 1, dtype=dtype)
        self.pointwise_bn = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        out = silu(self.depthwise_bn(self.depthwise(x)))
        return silu(self.pointwise_bn(self.pointwise(out)))

    def conv_macs(self, h: int, w: int) -> int:
        return self.depthwise.macs(h, w) + self.pointwise.macs(h, w)


class EfficientChannelAttention(Module):
    """Per-channel sigmoid gate from a k-wide convolution over pooled channels."""

    def __init__(self, rng: np.random.Generator, channels: int,
                 kernel_size: Optional[int] = None, dtype=np.float32):
        super().__init__()
        k = kernel_size if kernel_size is not None else eca_kernel_size(channels)
        if k % 2 == 0:
            raise ConfigError(f"attention kernel must be odd, got {k}")
        if k > channels:
            raise ConfigError(f"attention kernel {k} exceeds channel count {channels}")
        self.channels = channels
        self.kernel_size = k
        self.weight = Parameter(kaiming_uniform(rng, (k,), k, dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise DimensionError(f"attention expects {self.channels} channels, got {x.shape}")
        pooled = global_avg_pool(x)                       # [N, C]
        scale = sigmoid(channel_conv1d(pooled, self.weight))
        n, c = scale.shape
        return mul(x, scale.reshape((n, c, 1, 1)))

    def conv_macs(self) -> int:
        return self.kernel_size * self.channels


@dataclass
class GmlgffConfig:
    """Grouped local-global fusion block over ``channels``-wide maps.

    ``groups`` splits the local representation into near-equal channel groups,
    one scan layer per group. Disabling the global path (and with it fusion)
    reduces the block to shortcut + local representation.
    """

    channels: int
    groups: int = 4
    enable_global: bool = True
    enable_fusion: bool = True
    state_size: int = 8
    dt_rank: Optional[int] = None
    vm_expand: int = 2
    eps: float = 1e-5

    def validate(self) -> None:
        if not 1 <= self.groups <= 4:
            raise ConfigError(f"groups must be in 1..4, got {self.groups}")
        if self.channels < self.groups:
            raise ConfigError(f"channels {self.channels} smaller than groups {self.groups}")
        if self.enable_fusion and not self.enable_global:
            raise ConfigError("enable_fusion requires enable_global")

    def branch_config(self, width: int) -> VmLayerConfig:
        return VmLayerConfig(channels=width, state_size=self.state_size,
                             dt_rank=self.dt_rank, expand=self.vm_expand, eps=self.eps)


class GMLGFFBlock(Module):
    """Local branch, grouped scan branch, attention-gated concat fusion, shortcut.

    The local representation always runs. With the global path on, its output
    is split into groups, each group goes through one scan layer, and the
    re-concatenated global features are fused with the attention-adjusted
    local features through a pointwise convolution back to C channels. The
    block output always adds the input shortcut and preserves shape.
    """

    def __init__(self, rng: np.random.Generator, cfg: GmlgffConfig, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.local = LocalRepresentation(rng, cfg.channels, dtype=dtype)
        self.widths = split_sizes(cfg.channels, cfg.groups) if cfg.enable_global else []
        if cfg.enable_global:
            self.branches = [VisionMambaLayer(rng, cfg.branch_config(w), dtype=dtype)
                             for w in self.widths]
        if cfg.enable_fusion:
            self.attention = EfficientChannelAttention(rng, cfg.channels, dtype=dtype)
            self.fuse = Conv2d(rng, 2 * cfg.channels, cfg.channels, 1, dtype=dtype)
            self.fuse_bn = BatchNorm2d(cfg.channels, dtype=dtype)

    def global_path(self, local_out: Tensor) -> Tensor:
        parts = []
        offset = 0
        for width, branch in zip(self.widths, self.branches):
            parts.append(branch(local_out[:, offset:offset + width]))
            offset += width
        return concat(parts, axis=1) if len(parts) > 1 else parts[0]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.channels:
            raise DimensionError(f"GMLGFF expects {self.cfg.channels} channels, got {x.shape}")
        local_out = self.local(x)
        if not self.cfg.enable_global:
            return add(x, local_out)
        global_out = self.global_path(local_out)
        if not self.cfg.enable_fusion:
            return add(x, global_out)
        stacked = concat([self.attention(local_out), global_out], axis=1)
        fused = silu(self.fuse_bn(self.fuse(stacked)))
        return add(x, fused)

    def conv_linear_macs(self, h: int, w: int) -> int:
        total = self.local.conv_macs(h, w)
        if self.cfg.enable_global:
            total += sum(b.conv_linear_macs(h, w) for b in self.branches)
        if self.cfg.enable_fusion:
            total += self.fuse.macs(h, w) + self.attention.conv_macs()
        return total

    def scan_macs(self, h: int, w: int) -> int:
        if not self.cfg.enable_global:
            return 0
        return sum(b.scan_macs(h, w) for b in self.branches)
