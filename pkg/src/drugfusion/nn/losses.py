"""Loss functions for the outcome models."""

from __future__ import annotations

import numpy as np

from .layers import NnError

__all__ = ["weighted_bce", "l2_penalty"]

CLAMP_EPS = 1e-7


def weighted_bce(
    p: np.ndarray,
    y: np.ndarray,
    w_pos: float = 1.0,
    w_neg: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Class-weighted binary cross-entropy, averaged over the batch.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs. Returns
    the scalar loss and its gradient with respect to ``p`` (zero where the
    clamp was active). With both weights 1 this is plain BCE.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise NnError(f"prediction/label shapes differ: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise NnError("empty batch")
    if w_pos <= 0 or w_neg <= 0:
        raise NnError("class weights must be positive")

    clamped = np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
    per_example = -(w_pos * y * np.log(clamped) + w_neg * (1.0 - y) * np.log(1.0 - clamped))
    loss = float(per_example.mean())

    grad = -(w_pos * y / clamped - w_neg * (1.0 - y) / (1.0 - clamped)) / p.size
    grad = np.where(p == clamped, grad, 0.0)
    return loss, grad


def l2_penalty(matrices, coeff: float) -> float:
    """coeff times the summed squared entries of the given weight matrices."""
    if coeff == 0.0:
        return 0.0
    total = 0.0
    for mat in matrices:
        total += float(np.sum(np.square(mat, dtype=np.float64)))
    return coeff * total
