"""Central finite-difference checks for the tape engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward

# magnitudes below this are compared absolutely
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-4,
                 indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``x.data`` (in place, restored).

    With ``indices`` only those entries are probed; the rest stay NaN.
    """
    out = np.full(x.shape, np.nan) if indices is not None else np.empty(x.shape)
    flat = x.data.reshape(-1)
    todo = range(flat.size) if indices is None else [np.ravel_multi_index(i, x.shape) for i in indices]
    for i in todo:
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn().data)
        flat[i] = orig - step
        lo = float(fn().data)
        flat[i] = orig
        out.reshape(-1)[i] = (hi - lo) / (2.0 * step)
    return out


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    with Tape() as tape:
        out = fn()
    backward(out, tape)
    return [x.grad if x.grad is not None else np.zeros(x.shape) for x in inputs]


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-4,
                    max_probes: int | None = None, seed: int = 0) -> list[float]:
    """Relative error per input between tape gradients and central differences.

    ``max_probes`` caps the entries probed per input (chosen at random).
    """
    grads = analytic_grads(fn, inputs)
    rng = np.random.default_rng(seed)
    errors = []
    for x, g in zip(inputs, grads):
        if max_probes is not None and x.data.size > max_probes:
            flat = rng.choice(x.data.size, size=max_probes, replace=False)
            idx = [np.unravel_index(i, x.shape) for i in np.sort(flat)]
            num = numeric_grad(fn, x, step, idx)
            mask = ~np.isnan(num)
            errors.append(relative_error(g[mask], num[mask]))
        else:
            errors.append(relative_error(g, numeric_grad(fn, x, step)))
    return errors
