"""Central finite differences, used to check the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_gradient(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """(f(p + h) - f(p - h)) / 2h for every entry of every parameter."""
    grads = []
    for p in params:
        g = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """|a - b| / max(|a|, |b|, floor) with Euclidean norms over the whole array."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def gradcheck(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst per-parameter relative error between autodiff and finite differences."""
    analytic = backward(loss_fn(), params)
    numeric = numeric_gradient(loss_fn, params, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
