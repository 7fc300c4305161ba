"""Central finite differences for verifying hand-written backward passes."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """``d f / d x`` by central differences; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=[["readwrite"]])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||)`` in the Euclidean norm.

    Element-wise ratios blow up on entries that are zero up to rounding; the
    norm form measures the error relative to the gradient as a whole.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
