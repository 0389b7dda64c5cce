"""Finite-difference verification of analytic gradients.

The checker is the independent oracle for every backward pass in the library:
it perturbs each input element by a central difference step and compares the
numeric slope of a scalarized output against the recorded gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    """Per-input maximum relative error between analytic and numeric grads."""

    max_rel_errors: list = field(default_factory=list)
    tolerance: float = 1e-6

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_errors) if self.max_rel_errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        errs = ", ".join(f"{e:.3g}" for e in self.max_rel_errors)
        return f"grad_check {status}: max rel err {self.max_rel_error:.3g} (tol {self.tolerance:.3g}) per input [{errs}]"


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def grad_check(op: Callable[..., Tensor], inputs: Sequence[Tensor],
               tolerance: float = 1e-6, step: float = 1e-5,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``op`` against central differences.

    Inputs must be float64 and positioned away from non-differentiable kinks
    (e.g. relu at 0). The output is scalarized by a fixed random projection so
    that sign errors cannot cancel. Non-finite analytic gradients are a hard
    failure.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        t.requires_grad = True
        t.zero_grad()

    rng = np.random.default_rng(seed)
    out = op(*inputs)
    proj = rng.standard_normal(out.shape)

    def scalar_from(arrays):
        saved = [t.data for t in inputs]
        for t, a in zip(inputs, arrays):
            t.data = a
        try:
            return float((op(*inputs).data * proj).sum())
        finally:
            for t, s in zip(inputs, saved):
                t.data = s

    loss = (out * Tensor(proj, dtype=np.float64)).sum()
    loss.backward()

    report = GradCheckReport(tolerance=tolerance)
    for idx, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(analytic).all():
            raise NumericError(f"non-finite analytic gradient for input {idx}")
        numeric = np.zeros_like(t.data)
        flat = numeric.reshape(-1)
        base = [u.data.copy() for u in inputs]
        for j in range(t.size):
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[idx].reshape(-1)[j] += step
            minus[idx].reshape(-1)[j] -= step
            flat[j] = (scalar_from(plus) - scalar_from(minus)) / (2 * step)
        report.max_rel_errors.append(_rel_err(analytic, numeric))
    return report
