"""Input preparation: mean-pixel subtraction and horizontal mirroring."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def mirror_boxes(boxes: np.ndarray, slots: Sequence[tuple[int, str]], width: float) -> np.ndarray:
    """Flip ``(R, 4)`` image boxes horizontally.

    ``x -> width - x`` (pixel-edge coordinates) and the left/right rows of
    each symmetric group trade places so row semantics are preserved.
    """
    b = np.asarray(boxes, dtype=np.float64).copy()
    x_min = width - b[:, 3]
    x_max = width - b[:, 1]
    b[:, 1], b[:, 3] = x_min, x_max
    order = list(range(len(slots)))
    index = {s: i for i, s in enumerate(slots)}
    for i, (gid, side) in enumerate(slots):
        if side == "left":
            order[i] = index[(gid, "right")]
        elif side == "right":
            order[i] = index[(gid, "left")]
    return b[order]


def preprocess(image: np.ndarray, boxes: np.ndarray, slots: Sequence[tuple[int, str]],
               mirror: bool = False, mean_pixel=0.0) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the per-channel mean and optionally mirror.

    Args:
        image: ``(C, H, W)`` array.
        boxes: ``(R, 4)`` boxes ``(y_min, x_min, y_max, x_max)`` in image space.
        slots: ``(group_id, side)`` per box row.
        mirror: flip image and boxes horizontally.
        mean_pixel: scalar or per-channel means.

    Returns:
        ``(image', boxes')``.
    """
    img = np.asarray(image, dtype=np.float64)
    mean = np.asarray(mean_pixel, dtype=np.float64).reshape(-1, 1, 1) if np.ndim(mean_pixel) else mean_pixel
    out = img - mean
    b = np.asarray(boxes, dtype=np.float64)
    if mirror:
        out = out[:, :, ::-1].copy()
        b = mirror_boxes(b, slots, img.shape[2])
    return out, b
