"""Multi-label sigmoid cross-entropy averaged over RoI rows."""

from __future__ import annotations

import numpy as np

from aurk.errors import ShapeError
from aurk.nn.ops import sigmoid


def sigmoid_ce_loss(logits, y) -> tuple[float, np.ndarray]:
    """Binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets.

    ``loss = -(1/R) * sum_{r,l} [y log s + (1 - y) log(1 - s)]`` where R is the
    number of rows, computed as ``max(x, 0) - x*y + log1p(exp(-|x|))`` so large
    logits neither overflow nor lose the small term. Returns the loss and
    ``d loss / d logits = (s - y) / R``.
    """
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(getattr(y, "bits", y), dtype=np.float64)
    if x.shape != t.shape:
        raise ShapeError(f"logits {x.shape} and labels {t.shape} differ")
    if x.ndim != 2:
        raise ShapeError("sigmoid_ce_loss expects (rows, L) arrays")
    rows = x.shape[0]
    per = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    loss = float(per.sum() / rows)
    grad = (sigmoid(x) - t) / rows
    return loss, grad
