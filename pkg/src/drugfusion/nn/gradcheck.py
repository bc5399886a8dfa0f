"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["GradCheckResult", "grad_check"]

# Elements where both gradients are tiny are compared on this floor, which
# amounts to an absolute tolerance of tol * GRAD_FLOOR there.
GRAD_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    """Worst relative error per parameter tensor, plus the overall verdict."""

    per_param: dict[str, float]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def worst(self) -> str:
        if not self.per_param:
            return "<no parameters>"
        name = max(self.per_param, key=self.per_param.get)
        return f"{name}: {self.per_param[name]:.3e}"


def grad_check(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckResult:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must recompute the loss from the current (mutated) values
    of ``params`` on every call, with everything else (inputs, dropout
    masks) held fixed. Every element of every tensor is perturbed, so keep
    the model tiny. Parameters should be float64 for the comparison to be
    meaningful at the default tolerance.
    """
    per_param: dict[str, float] = {}
    for name, tensor in params.items():
        grad = analytic[name]
        if grad.shape != tensor.shape:
            raise ValueError(f"{name}: analytic gradient shape {grad.shape} vs {tensor.shape}")
        worst = 0.0
        flat = tensor.ravel()
        grad_flat = grad.ravel()
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            up = loss_fn()
            flat[idx] = original - h
            down = loss_fn()
            flat[idx] = original
            numeric = (up - down) / (2.0 * h)
            a = float(grad_flat[idx])
            denom = max(abs(a) + abs(numeric), GRAD_FLOOR)
            worst = max(worst, abs(a - numeric) / denom)
        per_param[name] = worst
    return GradCheckResult(per_param=per_param, tolerance=tol)
