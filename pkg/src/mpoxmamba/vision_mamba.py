"""Four-directional 2-D scanning over feature maps.

A feature map is flattened into four 1-D sequences, one per traversal
direction (row/column order, forward/reverse), each direction is processed by
its own selective-scan block, and the processed sequences are un-permuted and
summed back into a map of the original size. The merge is a plain sum: the
following normalization absorbs the constant factor and keeps the
scan/merge round trip an exact factor of four.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import LayerNorm, Linear, Module
from .ssm import S6, default_dt_rank
from .tensor import Tensor, add, as_tensor, flip, mul, silu


class ScanDirection(enum.Enum):
    ROW_FORWARD = "row_forward"
    COL_FORWARD = "col_forward"
    ROW_REVERSE = "row_reverse"
    COL_REVERSE = "col_reverse"


DIRECTIONS = (
    ScanDirection.ROW_FORWARD,
    ScanDirection.COL_FORWARD,
    ScanDirection.ROW_REVERSE,
    ScanDirection.COL_REVERSE,
)


def scan_order(direction: ScanDirection, h: int, w: int) -> np.ndarray:
    """Permutation mapping sequence position -> row-major grid index.

    The four orders are distinct bijections; each reverse order is the exact
    reversal of its forward partner.
    """
    base = np.arange(h * w).reshape(h, w)
    if direction is ScanDirection.ROW_FORWARD:
        return base.reshape(-1)
    if direction is ScanDirection.COL_FORWARD:
        return base.T.reshape(-1).copy()
    if direction is ScanDirection.ROW_REVERSE:
        return base.reshape(-1)[::-1].copy()
    return base.T.reshape(-1)[::-1].copy()


def _to_sequences(x: Tensor) -> List[Tensor]:
    """[B,C,H,W] -> four [B,L,C] traversals."""
    b, c, h, w = x.shape
    rows = x.reshape((b, c, h * w)).transpose((0, 2, 1))
    cols = x.transpose((0, 1, 3, 2)).reshape((b, c, h * w)).transpose((0, 2, 1))
    return [rows, cols, flip(rows, axis=1), flip(cols, axis=1)]


def _from_sequences(seqs: Sequence[Tensor], h: int, w: int) -> Tensor:
    """Inverse traversals of four [B,L,C] sequences, summed into [B,C,H,W]."""
    rows, cols, rrev, crev = seqs
    b, length, c = rows.shape
    rows = add(rows, flip(rrev, axis=1))
    cols = add(cols, flip(crev, axis=1))
    grid_r = rows.transpose((0, 2, 1)).reshape((b, c, h, w))
    grid_c = cols.transpose((0, 2, 1)).reshape((b, c, w, h)).transpose((0, 1, 3, 2))
    return add(grid_r, grid_c)


def cross_scan(fmap) -> List[Tensor]:
    """Flatten a map into the four directional sequences.

    Accepts [C,H,W] (returns four [H*W, C]) or batched [B,C,H,W] (returns four
    [B, H*W, C]). Sequence order follows :data:`DIRECTIONS`.
    """
    fmap = as_tensor(fmap)
    if fmap.ndim == 3:
        batched = fmap.reshape((1,) + fmap.shape)
        return [s.reshape(s.shape[1:]) for s in _to_sequences(batched)]
    if fmap.ndim != 4:
        raise DimensionError(f"cross_scan expects [C,H,W] or [B,C,H,W], got {fmap.shape}")
    return _to_sequences(fmap)


def cross_merge(seqs: Sequence, h: int, w: int) -> Tensor:
    """Un-permute four directional sequences and sum them into one map.

    Accepts four [H*W, C] (returns [C,H,W]) or four [B, H*W, C] (returns
    [B,C,H,W]). Merging the four untouched scans of a map M yields 4*M.
    """
    seqs = [as_tensor(s) for s in seqs]
    if len(seqs) != 4:
        raise DimensionError(f"cross_merge expects 4 sequences, got {len(seqs)}")
    for s in seqs:
        if s.shape != seqs[0].shape:
            raise DimensionError(f"cross_merge: mismatched sequence shapes {s.shape} vs {seqs[0].shape}")
    if seqs[0].shape[-2] != h * w:
        raise DimensionError(f"cross_merge: sequence length {seqs[0].shape[-2]} != {h}*{w}")
    if seqs[0].ndim == 2:
        out = _from_sequences([s.reshape((1,) + s.shape) for s in seqs], h, w)
        return out.reshape(out.shape[1:])
    return _from_sequences(seqs, h, w)


@dataclass
class VmLayerConfig:
    """Shape-preserving scan layer over ``channels``-wide maps.

    ``expand`` widens the scanned representation; ``dt_rank`` (None = auto,
    ceil(expand * channels / 16)) sets the rank of the timescale projection.
    """

    channels: int
    state_size: int = 8
    dt_rank: Optional[int] = None
    expand: int = 2
    eps: float = 1e-5

    def validate(self) -> None:
        if self.channels < 1 or self.state_size < 1:
            raise ConfigError(f"VmLayerConfig: channels and state_size must be >= 1, got {self}")
        if self.expand < 1:
            raise ConfigError(f"VmLayerConfig: expand must be >= 1, got {self.expand}")

    @property
    def d_inner(self) -> int:
        return self.expand * self.channels

    @property
    def effective_dt_rank(self) -> int:
        return self.dt_rank if self.dt_rank is not None else default_dt_rank(self.d_inner)


class VisionMambaLayer(Module):
    """Norm -> project -> four directional scans -> merge -> norm -> gate -> project -> residual.

    The input projection produces the scanned representation and a gating
    branch; each direction runs an independent :class:`S6`. Output shape
    equals input shape for every valid C, H, W.
    """

    def __init__(self, rng: np.random.Generator, cfg: VmLayerConfig, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d_inner = cfg.d_inner
        self.norm_in = LayerNorm(cfg.channels, eps=cfg.eps, dtype=dtype)
        self.in_proj = Linear(rng, cfg.channels, 2 * d_inner, bias=False, dtype=dtype)
        self.scans = [
            S6(rng, d_inner, cfg.state_size, dt_rank=cfg.effective_dt_rank, dtype=dtype)
            for _ in DIRECTIONS
        ]
        self.norm_out = LayerNorm(d_inner, eps=cfg.eps, dtype=dtype)
        self.out_proj = Linear(rng, d_inner, cfg.channels, bias=False, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.channels:
            raise DimensionError(
                f"VisionMambaLayer expects [B,{self.cfg.channels},H,W], got {x.shape}")
        b, c, h, w = x.shape
        d_inner = self.cfg.d_inner

        seq = x.reshape((b, c, h * w)).transpose((0, 2, 1))
        projected = self.in_proj(self.norm_in(seq))
        u = projected[:, :, :d_inner]
        gate = projected[:, :, d_inner:]

        umap = u.transpose((0, 2, 1)).reshape((b, d_inner, h, w))
        branches = cross_scan(umap)
        scanned = [scan(branch) for scan, branch in zip(self.scans, branches)]
        merged = cross_merge(scanned, h, w)

        mseq = merged.reshape((b, d_inner, h * w)).transpose((0, 2, 1))
        gated = mul(self.norm_out(mseq), silu(gate))
        out = self.out_proj(gated).transpose((0, 2, 1)).reshape((b, c, h, w))
        return add(out, x)

    def conv_linear_macs(self, h: int, w: int) -> int:
        """Projection multiplies (the dense-layer cost bucket)."""
        length = h * w
        c, d_inner = self.cfg.channels, self.cfg.d_inner
        return length * c * 2 * d_inner + length * d_inner * c

    def scan_macs(self, h: int, w: int) -> int:
        return sum(scan.macs(h * w) for scan in self.scans)


def vm_layer_forward(fmap, layer: VisionMambaLayer) -> Tensor:
    """Run one scan layer over an unbatched [C,H,W] map (or batched NCHW)."""
    fmap = as_tensor(fmap)
    if fmap.ndim == 3:
        out = layer(fmap.reshape((1,) + fmap.shape))
        return out.reshape(out.shape[1:])
    return layer(fmap)
