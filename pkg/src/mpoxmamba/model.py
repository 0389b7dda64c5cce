"""The full network: stem, two grouped-fusion stages, head, and classifier.

Layer sequence (224x224x3 default): 3x3 stride-2 conv to 32 channels, a
stride-1 inverted residual, a stride-2 inverted residual to 64, a stack of
fusion blocks at 64 x H/4, stride-2 to 128, a second stack at 128 x H/8,
stride-2 to 256, a pointwise lift to 512, global average pooling and a linear
classifier. Also provides parameter/MAC accounting and Grad-CAM heatmaps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from .blocks import GMLGFFBlock, GmlgffConfig, InResConfig, InvertedResidual
from .errors import ConfigError, DimensionError
from .nn import ConvBnSiLU, Linear, Module
from .ops import global_avg_pool
from .tensor import Tensor, as_tensor

ABLATIONS = ("basic", "vm", "vm-fusion", "g2", "g3", "g4")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; the defaults land the lightweight budget.

    Width scaling keeps the published shape ladder (stem 32, stages 64/128
    with 128/256 downsampling, 512 head); ``width_divisor`` shrinks every
    width for desk-scale experiments.
    """

    num_classes: int = 2
    input_hw: Tuple[int, int] = (224, 224)
    in_channels: int = 3
    stem_channels: int = 32
    stage_widths: Tuple[int, int] = (64, 128)
    downsample_widths: Tuple[int, int] = (128, 256)
    head_width: int = 512
    stage_depths: Tuple[int, int] = (3, 3)
    groups: int = 4
    state_size: int = 8
    dt_rank: Optional[int] = None
    vm_expand: int = 2
    expansion: int = 2
    enable_global: bool = True
    enable_fusion: bool = True
    dtype: str = "float32"

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        h, w = self.input_hw
        if h % 16 or w % 16:
            raise ConfigError(f"input size {self.input_hw} must be divisible by 16")
        if not 1 <= self.groups <= 4:
            raise ConfigError(f"groups must be in 1..4, got {self.groups}")
        if min(self.stage_widths) < self.groups:
            raise ConfigError(f"stage widths {self.stage_widths} must be >= groups {self.groups}")
        if self.enable_fusion and not self.enable_global:
            raise ConfigError("enable_fusion requires enable_global")
        if len(self.stage_widths) != 2 or len(self.stage_depths) != 2 or len(self.downsample_widths) != 2:
            raise ConfigError("exactly two fusion stages are expected")
        if min(self.stage_depths) < 1:
            raise ConfigError(f"stage depths must be >= 1, got {self.stage_depths}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def scaled(self, width_divisor: int) -> "ModelConfig":
        """Width-reduced copy for desk-scale training and gradient checks."""
        down = lambda v: max(self.groups, v // width_divisor)
        return replace(
            self,
            stem_channels=max(4, self.stem_channels // width_divisor),
            stage_widths=tuple(down(v) for v in self.stage_widths),
            downsample_widths=tuple(max(4, v // width_divisor) for v in self.downsample_widths),
            head_width=max(8, self.head_width // width_divisor),
        )


def ablation_config(name: str, base: Optional[ModelConfig] = None) -> ModelConfig:
    """Named configurations of the module-removal ladder."""
    cfg = base if base is not None else ModelConfig()
    table = {
        "basic": dict(enable_global=False, enable_fusion=False, groups=1),
        "vm": dict(groups=1, enable_global=True, enable_fusion=False),
        "vm-fusion": dict(groups=1, enable_global=True, enable_fusion=True),
        "g2": dict(groups=2, enable_global=True, enable_fusion=True),
        "g3": dict(groups=3, enable_global=True, enable_fusion=True),
        "g4": dict(groups=4, enable_global=True, enable_fusion=True),
    }
    if name not in table:
        raise ConfigError(f"unknown ablation {name!r}; one of {ABLATIONS}")
    return replace(cfg, **table[name])


@dataclass
class CostReport:
    """Multiply-accumulate counts split by operator family.

    ``conv_linear_macs`` covers convolution and dense-projection layers, the
    bucket network profilers count and report as FLOPs; that convention is
    what published lightweight-model tables use, so it is the headline
    ``flops`` here. ``scan_macs`` covers everything inside the selective-scan
    operators (timescale/state projections, discretization, recurrence,
    readout). ``total_flops`` counts every MAC as two floating-point ops.
    """

    conv_linear_macs: int = 0
    scan_macs: int = 0

    @property
    def total_macs(self) -> int:
        return self.conv_linear_macs + self.scan_macs

    @property
    def flops(self) -> int:
        return self.conv_linear_macs

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs


@dataclass
class StageShape:
    name: str
    channels: int
    height: int
    width: int

    def __str__(self):
        return f"{self.name}: {self.channels} x {self.height} x {self.width}"


class MpoxMamba(Module):
    """The assembled classifier. Build via :func:`build_model` for seeding."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        dtype = cfg.np_dtype
        t = cfg.expansion
        w2, w3 = cfg.stage_widths
        d2, d3 = cfg.downsample_widths

        self.stem = ConvBnSiLU(rng, cfg.in_channels, cfg.stem_channels, 3,
                               stride=2, padding=1, dtype=dtype)
        self.stem_block = InvertedResidual(
            rng, InResConfig(cfg.stem_channels, cfg.stem_channels, 1, t), dtype=dtype)
        self.down1 = InvertedResidual(
            rng, InResConfig(cfg.stem_channels, w2, 2, t), dtype=dtype)
        self.stage2 = [GMLGFFBlock(rng, self._block_cfg(w2), dtype=dtype)
                       for _ in range(cfg.stage_depths[0])]
        self.down2 = InvertedResidual(rng, InResConfig(w2, d2, 2, t), dtype=dtype)
        self.stage3 = [GMLGFFBlock(rng, self._block_cfg(d2), dtype=dtype)
                       for _ in range(cfg.stage_depths[1])]
        self.down3 = InvertedResidual(rng, InResConfig(d2, d3, 2, t), dtype=dtype)
        self.head = ConvBnSiLU(rng, d3, cfg.head_width, 1, dtype=dtype)
        self.classifier = Linear(rng, cfg.head_width, cfg.num_classes, dtype=dtype)

    def _block_cfg(self, channels: int) -> GmlgffConfig:
        c = self.cfg
        return GmlgffConfig(channels=channels, groups=c.groups,
                            enable_global=c.enable_global, enable_fusion=c.enable_fusion,
                            state_size=c.state_size, dt_rank=c.dt_rank, vm_expand=c.vm_expand)

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise DimensionError(f"expected [N,{self.cfg.in_channels},H,W], got {x.shape}")
        if (x.shape[2], x.shape[3]) != tuple(self.cfg.input_hw):
            raise DimensionError(
                f"expected spatial size {self.cfg.input_hw}, got {x.shape[2:]}")
        if x.dtype != self.cfg.np_dtype:
            raise DimensionError(f"expected dtype {self.cfg.dtype}, got {x.dtype}")

    def features(self, x: Tensor) -> Tensor:
        """Run the convolutional trunk to the pre-pooling head feature map."""
        self._check_input(x)
        out = self.stem_block(self.stem(x))
        out = self.down1(out)
        for block in self.stage2:
            out = block(out)
        out = self.down2(out)
        for block in self.stage3:
            out = block(out)
        out = self.down3(out)
        return self.head(out)

    def forward(self, x: Tensor) -> Tensor:
        return self.classifier(global_avg_pool(self.features(x)))

    # -- accounting ------------------------------------------------------------

    def stage_shapes(self) -> List[StageShape]:
        h, w = self.cfg.input_hw
        c = self.cfg
        rows = [StageShape("stem", c.stem_channels, h // 2, w // 2)]
        rows.append(StageShape("stage2", c.stage_widths[0], h // 4, w // 4))
        rows.append(StageShape("stage3", c.downsample_widths[0], h // 8, w // 8))
        rows.append(StageShape("downsample3", c.downsample_widths[1], h // 16, w // 16))
        rows.append(StageShape("head", c.head_width, h // 16, w // 16))
        return rows

    def count_costs(self, input_hw: Optional[Tuple[int, int]] = None) -> CostReport:
        h, w = input_hw if input_hw is not None else self.cfg.input_hw
        report = CostReport()
        h2, w2 = h // 2, w // 2
        report.conv_linear_macs += self.stem.conv.macs(h2, w2)
        report.conv_linear_macs += self.stem_block.conv_macs(h2, w2)
        report.conv_linear_macs += self.down1.conv_macs(h2, w2)
        h4, w4 = h // 4, w // 4
        for block in self.stage2:
            report.conv_linear_macs += block.conv_linear_macs(h4, w4)
            report.scan_macs += block.scan_macs(h4, w4)
        report.conv_linear_macs += self.down2.conv_macs(h4, w4)
        h8, w8 = h // 8, w // 8
        for block in self.stage3:
            report.conv_linear_macs += block.conv_linear_macs(h8, w8)
            report.scan_macs += block.scan_macs(h8, w8)
        report.conv_linear_macs += self.down3.conv_macs(h8, w8)
        h16, w16 = h // 16, w // 16
        report.conv_linear_macs += self.head.conv.macs(h16, w16)
        report.conv_linear_macs += self.classifier.macs()
        return report


def build_model(cfg: ModelConfig, seed: int = 0) -> MpoxMamba:
    """Deterministically initialize a model: one seed fixes every parameter."""
    model = MpoxMamba(np.random.default_rng(seed), cfg)
    model.init_seed = seed
    model.finalize_names()
    return model


def model_forward(model: MpoxMamba, batch) -> Tensor:
    """Logits for a batch [N, C, H, W] at the configured input size."""
    return model(as_tensor(batch, dtype=model.cfg.np_dtype))


def count_params(model: MpoxMamba) -> int:
    """Total element count over trainable parameters."""
    return sum(p.size for p in model.parameters() if p.trainable)


def count_flops(model: MpoxMamba, input_hw: Optional[Tuple[int, int]] = None) -> CostReport:
    """Analytic per-layer cost accounting; see :class:`CostReport` for buckets."""
    return model.count_costs(input_hw)


@dataclass
class CamResult:
    heatmap: np.ndarray          # [h, w], max-normalized to [0, 1]
    upsampled: np.ndarray        # [H, W] at the model input size
    target_class: int
    logits: np.ndarray


def grad_cam(model: MpoxMamba, image, target_class: int) -> CamResult:
    """Class-evidence heatmap from head feature-map gradients.

    Channel weights are the spatially averaged gradients of the target logit
    with respect to the final head feature map; the map is the rectified
    weighted channel sum, max-normalized (an all-zero map stays all zero).
    """
    x = as_tensor(image, dtype=model.cfg.np_dtype)
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    if x.shape[0] != 1:
        raise DimensionError(f"grad_cam works on a single image, got batch {x.shape[0]}")
    if not 0 <= target_class < model.cfg.num_classes:
        raise ConfigError(
            f"target class {target_class} outside [0, {model.cfg.num_classes})")

    was_training = model.training
    model.eval()
    try:
        feat = model.features(x)
        feat.retain_grad()
        logits = model.classifier(global_avg_pool(feat))
        seed = np.zeros_like(logits.data)
        seed[0, target_class] = 1.0
        logits.backward(seed)
    finally:
        model.train(was_training)

    grads = feat.grad[0]                       # [C, h, w]
    weights = grads.mean(axis=(1, 2))          # [C]
    cam = np.maximum((weights[:, None, None] * feat.data[0]).sum(axis=0), 0.0)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    upsampled = bilinear_resize(cam, model.cfg.input_hw)
    return CamResult(heatmap=cam, upsampled=upsampled,
                     target_class=target_class, logits=logits.data[0].copy())


def bilinear_resize(arr: np.ndarray, out_hw: Tuple[int, int]) -> np.ndarray:
    """Bilinear interpolation of a [h, w] (or [h, w, c]) array to out_hw."""
    h, w = arr.shape[:2]
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return arr.copy()
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    if arr.ndim == 3:
        wy, wx = wy[..., None], wx[..., None]
    top = arr[y0][:, x0] * (1 - wx) + arr[y0][:, x1] * wx
    bottom = arr[y1][:, x0] * (1 - wx) + arr[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy
