"""Adam with bias correction and hyperbolic step decay."""

from __future__ import annotations

import numpy as np

from .layers import NnError, ShapeMismatch

__all__ = ["Adam"]


class Adam:
    """Adam over a named parameter dict; updates happen in place.

    The effective step size at update ``t`` (1-based) is
    ``lr / (1 + decay * t)``, and first/second moments use the standard
    bias correction. With gradients that stay exactly zero, parameters
    never move.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        decay: float = 1e-2,
    ):
        if lr <= 0:
            raise NnError("lr must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise NnError("betas must sit in [0, 1)")
        if eps <= 0 or decay < 0:
            raise NnError("eps must be positive and decay non-negative")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay = decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def effective_lr(self, t: int) -> float:
        return self.lr / (1.0 + self.decay * t)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if set(grads) != set(self.params):
            missing = set(self.params) ^ set(grads)
            raise ShapeMismatch(f"gradient keys do not match parameters: {sorted(missing)}")
        self.t += 1
        lr_t = self.effective_lr(self.t)
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, param in self.params.items():
            grad = grads[key]
            if grad.shape != param.shape:
                raise ShapeMismatch(f"{key}: gradient shape {grad.shape} vs parameter {param.shape}")
            if not np.all(np.isfinite(grad)):
                raise NnError(f"non-finite gradient for {key}")
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(grad)
            m_hat = m / bc1
            v_hat = v / bc2
            param -= (lr_t * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.dtype, copy=False)
