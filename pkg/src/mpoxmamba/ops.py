"""Neural-network forward operations with analytic backward passes.

All image ops use NCHW layout. Convolution is lowered to a matrix product via
im2col; its backward scatters through col2im. Every op here is exercised by
finite-difference gradient checks in the test suite.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError
from .tensor import Array, Tensor, make_op, unbroadcast


def _im2col(x: Array, kh: int, kw: int, stride: int, padding: int) -> Array:
    """[N,C,H,W] -> [N, C, kh, kw, Ho, Wo] patches."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))  # [N,C,Ho*,Wo*,kh,kw]
    windows = windows[:, :, ::stride, ::stride]
    return np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3))


def _col2im(cols: Array, hw: Tuple[int, int], kh: int, kw: int, stride: int, padding: int) -> Array:
    """Adjoint of :func:`_im2col`; cols is [N, C, kh, kw, Ho, Wo]."""
    n, c = cols.shape[:2]
    ho, wo = cols.shape[4], cols.shape[5]
    h, w = hw
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D convolution.

    x: [N, Cin, H, W]; weight: [Cout, Cin/groups, Kh, Kw]; bias: [Cout].
    Output spatial size is floor((S + 2*padding - K) / stride) + 1.
    groups=1 is a dense convolution, groups=Cin a depthwise one.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: stride {stride} and padding {padding} must be >= 1 and >= 0")
    if cin % groups or cout % groups:
        raise ConfigError(f"conv2d: groups {groups} must divide Cin {cin} and Cout {cout}")
    if cin_g != cin // groups:
        raise DimensionError(f"conv2d: weight expects Cin/groups {cin_g}, input has {cin // groups}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}+{padding}")

    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    cols = _im2col(x.data, kh, kw, stride, padding)  # [N,Cin,kh,kw,Ho,Wo]
    cols_g = cols.reshape(n, groups, cin_g * kh * kw, ho * wo)
    w_g = weight.data.reshape(groups, cout // groups, cin_g * kh * kw)
    out = np.einsum("gok,ngkp->ngop", w_g, cols_g, optimize=True)
    out = np.ascontiguousarray(out.reshape(n, cout, ho, wo))
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        g_g = g.reshape(n, groups, cout // groups, ho * wo)
        gw = np.einsum("ngop,ngkp->gok", g_g, cols_g, optimize=True).reshape(weight.shape)
        gcols = np.einsum("gok,ngop->ngkp", w_g, g_g, optimize=True)
        gcols = gcols.reshape(n, cin, kh, kw, ho, wo)
        gx = _col2im(gcols, (h, w), kh, kw, stride, padding)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_op(out, parents, vjp, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map y = x @ W^T + b for x [..., Fin], W [Fout, Fin], b [Fout]."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input features {x.shape[-1]} != weight Fin {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gx = g @ weight.data
        gw = np.tensordot(g, x.data, axes=(tuple(range(g.ndim - 1)),) * 2)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=tuple(range(g.ndim - 1)))

    return make_op(out, parents, vjp, "linear")


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: Array, running_var: Array,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with biased batch statistics and updates the
    running buffers in place (unbiased variance, momentum blend). Inference
    mode normalizes with the running buffers. eps keeps the rescale finite
    even for constant inputs.
    """
    if x.ndim != 4:
        raise DimensionError(f"batch_norm2d expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm2d: gamma/beta must be [{c}]")
    count = n * h * w
    if training and count < 2:
        raise DimensionError("batch_norm2d: training mode needs N*H*W >= 2")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def vjp(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            # gradient through the batch statistics
            istd = inv_std.reshape(1, c, 1, 1)
            mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
            mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = istd * (gxhat - mean_g - xhat * mean_gx)
        else:
            gx = gxhat * inv_std.reshape(1, c, 1, 1)
        return gx.astype(x.dtype), ggamma, gbeta

    return make_op(out, (x, gamma, beta), vjp, "batch_norm2d")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis (the channel axis of a sequence)."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: gamma/beta must be [{c}]")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data

    def vjp(g):
        ggamma = (g * xhat).reshape(-1, c).sum(axis=0)
        gbeta = g.reshape(-1, c).sum(axis=0)
        gxhat = g * gamma.data
        mean_g = gxhat.mean(axis=-1, keepdims=True)
        mean_gx = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv_std * (gxhat - mean_g - xhat * mean_gx)
        return gx.astype(x.dtype), ggamma, gbeta

    return make_op(out, (x, gamma, beta), vjp, "layer_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C], spatial mean per channel."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def vjp(g):
        return (np.broadcast_to(g.reshape(n, c, 1, 1) / (h * w), x.shape).astype(x.dtype, copy=True),)

    return make_op(out, (x,), vjp, "global_avg_pool")


def channel_conv1d(x: Tensor, weight: Tensor) -> Tensor:
    """1-D convolution across the channel axis, same padding, no bias.

    x: [N, C]; weight: [k] with k odd. Used by channel attention: each
    channel's score mixes its k nearest channels (zero padded at the ends).
    """
    if weight.ndim != 1 or weight.shape[0] % 2 == 0:
        raise ConfigError(f"channel_conv1d: kernel must be 1-D odd length, got {weight.shape}")
    n, c = x.shape
    k = weight.shape[0]
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad)))
    windows = sliding_window_view(xp, k, axis=1)  # [N, C, k]
    out = windows @ weight.data

    def vjp(g):
        gw = np.einsum("nck,nc->k", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(k):
            gxp[:, i:i + c] += g * weight.data[i]
        return gxp[:, pad:pad + c], gw

    return make_op(out, (x, weight), vjp, "channel_conv1d")
