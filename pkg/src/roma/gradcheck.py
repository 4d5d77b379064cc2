"""Central finite-difference gradient checks against the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T


def numeric_grad(fn: Callable[[], T.Tensor], x: T.Tensor, h: float = 1e-4) -> np.ndarray:
    """d fn / d x by central differences, perturbing ``x.data`` in place."""
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn().item()
        flat[i] = old - h
        down = fn().item()
        flat[i] = old
        g.reshape(-1)[i] = (up - down) / (2 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a|| + ||n||, floor).

    The floor keeps locally flat cases (both gradients at round-off level)
    from reading as total disagreement.
    """
    num = float(np.linalg.norm(analytic - numeric))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return num / max(den, floor)


def check(fn: Callable[[], T.Tensor], inputs: Sequence[T.Tensor], h: float = 1e-4) -> float:
    """Worst relative error between tape and finite-difference gradients."""
    for x in inputs:
        x.grad = None
    fn().backward()
    worst = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        worst = max(worst, rel_error(analytic, numeric_grad(fn, x, h)))
    return worst
