"""Selective state-space machinery.

The continuous system h'(t) = A h(t) + B x(t), y(t) = C h(t) is used only in
its discretized form. With a per-step timescale delta > 0 and diagonal A < 0,
zero-order hold gives, elementwise,

    a_bar = exp(delta * a)
    b_bar = (delta * a)^-1 (exp(delta * a) - 1) * delta * b

and the linear-time recurrence

    h_t = a_bar_t * h_{t-1} + b_bar_t * x_t
    y_t = c_t . h_t + d_skip * x_t.

When the parameters are time-invariant the same map is a causal convolution
with the structured kernel k = (c b_bar, c a_bar b_bar, ..., c a_bar^{L-1}
b_bar); both routes are implemented and tested against each other.

Shape conventions (canonical, batched): x [B, L, D]; a [D, N]; per-step
projections b, c [B, L, N]; delta [B, L, D]; discrete a_bar, b_bar
[B, L, D, N]. Scalar and unbatched variants are promoted and squeezed back.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .nn import Module, Parameter, kaiming_uniform
from .ops import linear
from .tensor import Tensor, as_tensor, exp, make_op, mul, no_grad, softplus

ZOH_TAYLOR_THRESHOLD = 1e-8


@dataclass
class SsmParams:
    """Continuous-side parameters of one selective scan.

    a: diagonal state matrix entries [D, N], strictly negative.
    b, c: input-dependent projections [B, L, N].
    delta: per-step timescale [B, L, D], strictly positive.
    d_skip: per-channel passthrough gain [D].
    """

    a: Tensor
    b: Tensor
    c: Tensor
    delta: Tensor
    d_skip: Tensor


@dataclass
class DiscreteParams:
    """Zero-order-hold discretization of (a, b) at timescales delta."""

    a_bar: Tensor
    b_bar: Tensor


def _phi(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z with a two-term Taylor branch near zero."""
    small = np.abs(z) < ZOH_TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def _phi_prime(z: np.ndarray) -> np.ndarray:
    """d/dz of :func:`_phi`: (z e^z - (e^z - 1)) / z^2, Taylor 1/2 + z/3 near 0."""
    small = np.abs(z) < ZOH_TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, z)
    exact = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    return np.where(small, 0.5 + z / 3.0, exact)


def _canonicalize(a: Tensor, b: Tensor, delta: Tensor):
    """Promote scalar / unbatched inputs to ([D,N], [B,L,N], [B,L,D])."""
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:  # [N] for a single channel
        a = a.reshape(1, a.shape[0])
    if a.ndim != 2:
        raise DimensionError(f"a must be scalar, [N] or [D,N], got {a.shape}")

    squeeze = 0
    if delta.ndim == 0:
        delta, squeeze = delta.reshape(1, 1, 1), 2
    elif delta.ndim == 2:
        delta, squeeze = delta.reshape((1,) + delta.shape), 1
    if delta.ndim != 3:
        raise DimensionError(f"delta must be scalar, [L,D] or [B,L,D], got {delta.shape}")

    if b.ndim == 0:
        b = b.reshape(1, 1, 1)
    elif b.ndim == 2:
        b = b.reshape((1,) + b.shape)
    if b.ndim != 3:
        raise DimensionError(f"b must be scalar, [L,N] or [B,L,N], got {b.shape}")

    if delta.shape[2] != a.shape[0]:
        raise DimensionError(f"delta channel dim {delta.shape[2]} != a channel dim {a.shape[0]}")
    if b.shape[2] != a.shape[1]:
        raise DimensionError(f"b state dim {b.shape[2]} != a state dim {a.shape[1]}")
    if b.shape[:2] != delta.shape[:2]:
        raise DimensionError(f"b and delta disagree on [B,L]: {b.shape} vs {delta.shape}")
    return a, b, delta, squeeze


def _zoh_a_bar(a: Tensor, delta: Tensor) -> Tensor:
    """exp(delta * a) for a [D,N], delta [B,L,D] -> [B,L,D,N]."""
    out = np.exp(delta.data[..., None] * a.data)

    def vjp(g):
        scaled = g * out
        ga = np.einsum("bldn,bld->dn", scaled, delta.data, optimize=True)
        gdelta = np.einsum("bldn,dn->bld", scaled, a.data, optimize=True)
        return ga, gdelta

    return make_op(out, (a, delta), vjp, "zoh_a_bar")


def _zoh_b_bar(a: Tensor, b: Tensor, delta: Tensor) -> Tensor:
    """phi(delta*a) * delta * b, the exact ZOH input matrix, -> [B,L,D,N]."""
    z = delta.data[..., None] * a.data
    phi = _phi(z)
    out = phi * delta.data[..., None] * b.data[:, :, None, :]

    def vjp(g):
        phip = _phi_prime(z)
        gb_term = g * b.data[:, :, None, :]
        # d out / d delta = b * (phi'(z) z + phi(z)) since z = delta * a
        gdelta = (gb_term * (phip * z + phi)).sum(axis=3)
        ga = np.einsum("bldn,bld->dn", gb_term * phip, delta.data ** 2, optimize=True)
        gbp = np.einsum("bldn,bld->bln", g * phi, delta.data, optimize=True)
        return ga, gbp, gdelta

    return make_op(out, (a, b, delta), vjp, "zoh_b_bar")


def discretize_zoh(a, b, delta) -> DiscreteParams:
    """Zero-order-hold discretization of diagonal (a, b) at timescales delta.

    Accepts scalars, unbatched arrays, or canonical batched tensors (see the
    module docstring); output shapes mirror the promotion. Requires a < 0 and
    delta > 0; |delta * a| below 1e-8 uses the Taylor limit b_bar ~ delta * b
    to avoid cancellation. Differentiable in all three arguments.
    """
    a, b, delta = as_tensor(a), as_tensor(b), as_tensor(delta)
    if np.any(a.data >= 0):
        raise ConfigError("discretize_zoh: state matrix entries must be strictly negative")
    if np.any(delta.data <= 0):
        raise ConfigError("discretize_zoh: timescale delta must be strictly positive")
    a2, b3, d3, squeeze = _canonicalize(a, b, delta)
    a_bar = _zoh_a_bar(a2, d3)
    b_bar = _zoh_b_bar(a2, b3, d3)
    if squeeze == 2:
        a_bar = a_bar.reshape(())
        b_bar = b_bar.reshape(())
    elif squeeze == 1:
        a_bar = a_bar.reshape(a_bar.shape[1:])
        b_bar = b_bar.reshape(b_bar.shape[1:])
    return DiscreteParams(a_bar=a_bar, b_bar=b_bar)


def selective_scan(x, a_bar, b_bar, c, d_skip) -> Tensor:
    """Linear-time recurrence h_t = a_bar_t h_{t-1} + b_bar_t x_t, y_t = c_t.h_t + d_skip x_t.

    x [B,L,D] (or [L,D]); a_bar, b_bar [B,L,D,N]; c [B,L,N]; d_skip [D].
    h_0 = 0. Output shape equals input shape. Raises NumericError naming the
    step index if the state turns non-finite. Runtime is linear in L: the
    only sequential loop is the state update, everything else is vectorized.
    """
    x, a_bar, b_bar, c, d_skip = map(as_tensor, (x, a_bar, b_bar, c, d_skip))
    unbatched = x.ndim == 2
    if unbatched:
        x = x.reshape((1,) + x.shape)
        a_bar = a_bar.reshape((1,) + a_bar.shape)
        b_bar = b_bar.reshape((1,) + b_bar.shape)
        c = c.reshape((1,) + c.shape)
    if x.ndim != 3 or a_bar.ndim != 4 or c.ndim != 3:
        raise DimensionError(
            f"selective_scan shapes: x {x.shape}, a_bar {a_bar.shape}, c {c.shape}")
    bsz, length, d_inner = x.shape
    n_state = a_bar.shape[3]
    if a_bar.shape != (bsz, length, d_inner, n_state) or b_bar.shape != a_bar.shape:
        raise DimensionError(f"a_bar/b_bar must be [{bsz},{length},{d_inner},{n_state}]")
    if c.shape != (bsz, length, n_state):
        raise DimensionError(f"c must be [{bsz},{length},{n_state}], got {c.shape}")
    if d_skip.shape != (d_inner,):
        raise DimensionError(f"d_skip must be [{d_inner}], got {d_skip.shape}")

    out = _scan_op(x, a_bar, b_bar, c, d_skip)
    return out.reshape(out.shape[1:]) if unbatched else out


def _scan_op(x: Tensor, a_bar: Tensor, b_bar: Tensor, c: Tensor, d_skip: Tensor) -> Tensor:
    bsz, length, d_inner = x.shape
    n_state = a_bar.shape[3]
    bx = b_bar.data * x.data[..., None]
    h = np.zeros((bsz, d_inner, n_state), dtype=x.dtype)
    hs = np.empty((bsz, length, d_inner, n_state), dtype=x.dtype)
    a_steps = a_bar.data
    for t in range(length):
        np.multiply(h, a_steps[:, t], out=h)
        h += bx[:, t]
        if not math.isfinite(float(h.sum(dtype=np.float64))):
            raise NumericError(f"selective_scan: non-finite state at step {t}")
        hs[:, t] = h
    y = np.einsum("bldn,bln->bld", hs, c.data, optimize=True)
    y += x.data * d_skip.data

    def vjp(gy):
        gc = np.einsum("bldn,bld->bln", hs, gy, optimize=True)
        gd = np.einsum("bld,bld->d", gy, x.data, optimize=True)
        ghs = np.empty_like(hs)
        gh = np.zeros((bsz, d_inner, n_state), dtype=x.dtype)
        c_data = c.data
        for t in range(length - 1, -1, -1):
            gh += gy[:, t, :, None] * c_data[:, t, None, :]
            ghs[:, t] = gh
            if t:
                np.multiply(gh, a_steps[:, t], out=gh)
        hs_prev = np.empty_like(hs)
        hs_prev[:, 0] = 0.0
        hs_prev[:, 1:] = hs[:, :-1]
        ga_bar = ghs * hs_prev
        gb_bar = ghs * x.data[..., None]
        gx = np.einsum("bldn,bldn->bld", ghs, b_bar.data, optimize=True)
        gx += gy * d_skip.data
        return gx, ga_bar, gb_bar, gc, gd

    return make_op(y, (x, a_bar, b_bar, c, d_skip), vjp, "selective_scan")


def lti_scan_kernel(a_bar, b_bar, c, length: int) -> np.ndarray:
    """Structured kernel (c b_bar, c a_bar b_bar, ..., c a_bar^{L-1} b_bar).

    Time-invariant parameters only: scalars or [N] vectors (summed over the
    state dimension). This is the global-convolution route equivalent to the
    recurrence; it is kept gradient-free and serves as the scan's oracle.
    """
    if length < 1:
        raise ConfigError(f"lti_scan_kernel: length must be >= 1, got {length}")
    a = np.atleast_1d(np.asarray(getattr(a_bar, "data", a_bar), dtype=np.float64))
    b = np.atleast_1d(np.asarray(getattr(b_bar, "data", b_bar), dtype=np.float64))
    cv = np.atleast_1d(np.asarray(getattr(c, "data", c), dtype=np.float64))
    if not (a.shape == b.shape == cv.shape):
        raise DimensionError(f"lti_scan_kernel: shapes {a.shape}, {b.shape}, {cv.shape} differ")
    powers = a[None, :] ** np.arange(length, dtype=np.float64)[:, None]
    return powers @ (cv * b)


def kernel_conv_apply(x, kernel) -> np.ndarray:
    """Causal convolution y_t = sum_{k<=t} kernel_k x_{t-k}."""
    xv = np.asarray(getattr(x, "data", x), dtype=np.float64)
    kv = np.asarray(getattr(kernel, "data", kernel), dtype=np.float64)
    if xv.shape != kv.shape or xv.ndim != 1:
        raise DimensionError(f"kernel_conv_apply: x {xv.shape} and kernel {kv.shape} must be equal 1-D")
    return np.convolve(xv, kv)[: xv.shape[0]]


def default_dt_rank(d_inner: int) -> int:
    return max(1, math.ceil(d_inner / 16))


class S6(Module):
    """Selective scan block: input-dependent delta, b, c over a learned diagonal A.

    Learned state: a_log [D,N] (A = -exp(a_log) keeps the scan stable),
    d_skip [D] passthrough, projections producing b_t, c_t [N] per step, and a
    rank-factorized delta projection with softplus bias so initial timescales
    fall in [dt_min, dt_max].
    """

    def __init__(self, rng: np.random.Generator, d_inner: int, state_size: int,
                 dt_rank: Optional[int] = None, dt_min: float = 1e-3, dt_max: float = 0.1,
                 dtype=np.float32):
        super().__init__()
        if d_inner < 1 or state_size < 1:
            raise ConfigError(f"S6 needs d_inner, state_size >= 1, got {d_inner}, {state_size}")
        self.d_inner = d_inner
        self.state_size = state_size
        self.dt_rank = dt_rank if dt_rank is not None else default_dt_rank(d_inner)

        self.a_log = Parameter(np.tile(
            np.log(np.arange(1, state_size + 1, dtype=dtype)), (d_inner, 1)))
        self.d_skip = Parameter(np.ones(d_inner, dtype=dtype))
        self.b_proj = Parameter(kaiming_uniform(rng, (state_size, d_inner), d_inner, dtype))
        self.c_proj = Parameter(kaiming_uniform(rng, (state_size, d_inner), d_inner, dtype))
        self.dt_down = Parameter(kaiming_uniform(rng, (self.dt_rank, d_inner), d_inner, dtype))
        bound = self.dt_rank ** -0.5
        self.dt_up = Parameter(rng.uniform(-bound, bound, size=(d_inner, self.dt_rank)).astype(dtype))
        dt_init = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
        self.dt_bias = Parameter(np.log(np.expm1(dt_init)).astype(dtype))

    def ssm_params(self, x: Tensor) -> SsmParams:
        delta = softplus(linear(linear(x, self.dt_down), self.dt_up, self.dt_bias))
        return SsmParams(
            a=mul(exp(self.a_log), -1.0),
            b=linear(x, self.b_proj),
            c=linear(x, self.c_proj),
            delta=delta,
            d_skip=self.d_skip,
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_inner:
            raise DimensionError(f"S6 expects {self.d_inner} channels, got {x.shape}")
        params = self.ssm_params(x)
        disc = discretize_zoh(params.a, params.b, params.delta)
        return selective_scan(x, disc.a_bar, disc.b_bar, params.c, params.d_skip)

    def macs(self, length: int) -> int:
        """Multiply counts of the scan operator itself, per input sequence.

        Projections producing delta/b/c, the two discretization products, the
        two recurrence terms and the state readout, all per (step, channel,
        state) lane.
        """
        d, n, r = self.d_inner, self.state_size, self.dt_rank
        proj = length * d * (2 * n + 2 * r)
        discretize = 4 * length * d * n
        recurrence = 2 * length * d * n
        readout = length * d * n + length * d
        return proj + discretize + recurrence + readout


def s6_forward(x, block: S6) -> Tensor:
    """Functional alias: run one selective-scan block over x [B,L,D] or [L,D]."""
    x = as_tensor(x)
    if x.ndim == 2:
        return block(x.reshape((1,) + x.shape)).reshape(x.shape)
    return block(x)


def bench_scan(lengths: Sequence[int], d_inner: int = 16, state_size: int = 8,
               repeats: int = 5, warmup: int = 2, seed: int = 0) -> list:
    """Median wall time of a forward scan per sequence length.

    Warm-up runs are excluded. Per-step work is constant, so timings should
    grow linearly with L.
    """
    if any(length < 64 for length in lengths):
        raise ConfigError("bench_scan: lengths must be >= 64")
    rng = np.random.default_rng(seed)
    results = []
    for length in lengths:
        x = rng.standard_normal((1, length, d_inner)).astype(np.float32)
        a_bar = np.broadcast_to(
            rng.uniform(0.1, 0.9, size=(d_inner, state_size)).astype(np.float32),
            (1, length, d_inner, state_size)).copy()
        b_bar = np.broadcast_to(
            rng.uniform(-0.5, 0.5, size=(d_inner, state_size)).astype(np.float32),
            (1, length, d_inner, state_size)).copy()
        c = rng.standard_normal((1, length, state_size)).astype(np.float32)
        d_skip = np.ones(d_inner, dtype=np.float32)
        times = []
        with no_grad():
            for i in range(warmup + repeats):
                start = time.perf_counter()
                selective_scan(x, a_bar, b_bar, c, d_skip)
                elapsed = time.perf_counter() - start
                if i >= warmup:
                    times.append(elapsed)
        results.append((length, float(np.median(times))))
    return results
