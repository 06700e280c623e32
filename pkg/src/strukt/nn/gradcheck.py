"""Finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParamStore


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    f: Callable[[ParamStore], tuple[float, np.ndarray]],
    params: ParamStore,
    n_probes: int = 200,
    eps: float = 1e-4,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> float:
    """Largest relative error between reverse-mode and central differences.

    ``f(params)`` returns ``(loss, flat_gradient)``.  ``n_probes`` coordinates
    are drawn without replacement (all of them when the store is smaller).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    flat = params.flat
    _, grad = f(params)
    grad = np.array(grad, copy=True)
    n = min(n_probes, flat.size)
    coords = rng.choice(flat.size, size=n, replace=False)
    worst = 0.0
    for c in coords:
        orig = flat[c]
        flat[c] = orig + eps
        up, _ = f(params)
        flat[c] = orig - eps
        down, _ = f(params)
        flat[c] = orig
        numeric = (up - down) / (2 * eps)
        worst = max(worst, float(relative_error(grad[c], numeric, floor)))
    return worst
