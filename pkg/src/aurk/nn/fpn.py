"""Pyramid level for an RoI of a given size."""

from __future__ import annotations

import math


def fpn_level(w: float, h: float, k0: int = 4, k_min: int = 2, k_max: int = 5) -> int:
    """``k0 + floor(log2(sqrt(w*h) / 224))`` clamped to ``[k_min, k_max]``."""
    if w <= 0 or h <= 0:
        raise ValueError("RoI width and height must be positive")
    k = k0 + math.floor(math.log2(math.sqrt(w * h) / 224.0))
    return max(k_min, min(k_max, k))
