"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_gradient(fn: Callable[[], Tensor], leaf: Tensor,
                     eps: float = 1e-6) -> np.ndarray:
    """Central-difference d(fn)/d(leaf), perturbing one entry at a time.

    ``fn`` must rebuild the graph from current leaf values and return a
    scalar Tensor.
    """
    grad = np.zeros_like(leaf.data)
    flat_data = leaf.data.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_data.size):
        orig = flat_data[i]
        flat_data[i] = orig + eps
        hi = fn().item()
        flat_data[i] = orig - eps
        lo = fn().item()
        flat_data[i] = orig
        flat_grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def gradient_check(fn: Callable[[], Tensor], leaves: Sequence[Tensor],
                   eps: float = 1e-6) -> float:
    """Max relative error between analytic and numeric gradients.

    Relative error per entry is |a - n| / max(|a|, |n|, 1e-8), so entries
    where both gradients vanish contribute zero.
    """
    for leaf in leaves:
        leaf.zero_grad()
    loss = fn()
    backward(loss)
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        numeric = numeric_gradient(fn, leaf, eps=eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst
