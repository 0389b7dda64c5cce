"""Selective state-space basics: discretization, recurrence, convolution form.

Walks the scan core bottom-up: zero-order-hold discretization of a diagonal
continuous system, the linear-time recurrence, the equivalent structured
convolution kernel for time-invariant parameters, and the measured linear
runtime scaling.
"""

import numpy as np

from mpoxmamba.ssm import (
    bench_scan,
    discretize_zoh,
    kernel_conv_apply,
    lti_scan_kernel,
    selective_scan,
)

print("== Zero-order-hold discretization ==")
print("A continuous system h' = a h + b x becomes a discrete recurrence")
print("h_t = a_bar h_{t-1} + b_bar x_t once a timescale delta is chosen.\n")
for a, b, delta in [(-1.0, 1.0, np.log(2.0)), (-2.0, 3.0, 0.5), (-1.0, 1.0, 1e-8)]:
    disc = discretize_zoh(a, b, delta)
    print(f"  a={a:+.1f} b={b:+.1f} delta={delta:.3g} -> "
          f"a_bar={float(disc.a_bar.data):.6f} b_bar={float(disc.b_bar.data):.6g}")
print("  (the last row exercises the small-delta Taylor branch: a_bar -> 1, b_bar -> delta*b)\n")

print("== Recurrence vs. global convolution ==")
length = 8
a_bar, b_bar, c = 0.5, 0.5, 1.0
x = np.zeros(length)
x[0] = 1.0  # impulse
kernel = lti_scan_kernel(a_bar, b_bar, c, length)
print(f"  impulse response from the kernel route : {np.round(kernel, 5)}")

xs = x.reshape(1, length, 1)
mk = lambda v: np.full((1, length, 1, 1), v)
ys = selective_scan(xs, mk(a_bar), mk(b_bar), np.full((1, length, 1), c), np.zeros(1))
print(f"  impulse response from the scan route   : {np.round(ys.data.ravel(), 5)}")

rng = np.random.default_rng(0)
x = rng.normal(size=length)
via_kernel = kernel_conv_apply(x, kernel)
via_scan = selective_scan(x.reshape(1, length, 1), mk(a_bar), mk(b_bar),
                          np.full((1, length, 1), c), np.zeros(1)).data.ravel()
print(f"  random input, max |scan - kernel| = {np.abs(via_scan - via_kernel).max():.2e}\n")

print("== Linear-time scaling ==")
print("The recurrence does constant work per step, so doubling the sequence")
print("length should roughly double the wall time:\n")
results = bench_scan([512, 1024, 2048], repeats=3, warmup=1)
prev = None
for length, seconds in results:
    ratio = f"  (x{seconds / prev:.2f})" if prev else ""
    print(f"  L={length:>5}: {seconds * 1e3:8.3f} ms{ratio}")
    prev = seconds
