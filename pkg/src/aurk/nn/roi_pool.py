"""Max RoI pooling over integer-quantized boxes, with exact backward.

A feature-space box ``(y_min, x_min, y_max, x_max)`` is snapped outward to
the cell range ``[floor(y_min), ceil(y_max))`` and clipped to the map. Along
each axis, an extent of ``n`` cells is split into ``k`` output bins:

* ``n >= k``: contiguous bins of ``n // k`` cells, the first ``n % k`` bins
  one cell larger;
* ``n < k``: bin ``i`` is the single cell ``floor(i * n / k)``.

A box that is empty after snapping becomes one cell at its clamped corner
and is reported in ``collapsed``. Backward sends each output gradient to
the arg-max cell of its bin; ties resolve to the lowest linear index.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from aurk.errors import ShapeError


@dataclass(frozen=True)
class RoISpec:
    boxes: np.ndarray       # (R, 4) feature-space y_min, x_min, y_max, x_max
    batch_index: np.ndarray  # (R,) image index of each box
    output_size: tuple[int, int] = (7, 7)

    def __post_init__(self):
        if self.output_size[0] < 1 or self.output_size[1] < 1:
            raise ValueError("RoI output size must be at least 1x1")


def quantize_box(box, height: int, width: int) -> tuple[int, int, int, int, bool]:
    """Snap a box to ``(y0, x0, y1, x1)`` cell bounds; last item flags a collapse."""
    y_min, x_min, y_max, x_max = (float(v) for v in box)
    y0 = min(max(math.floor(y_min), 0), height)
    x0 = min(max(math.floor(x_min), 0), width)
    y1 = min(max(math.ceil(y_max), 0), height)
    x1 = min(max(math.ceil(x_max), 0), width)
    collapsed = False
    if y1 <= y0:
        y0 = min(y0, height - 1)
        y1 = y0 + 1
        collapsed = True
    if x1 <= x0:
        x0 = min(x0, width - 1)
        x1 = x0 + 1
        collapsed = True
    return y0, x0, y1, x1, collapsed


def bin_edges(n: int, k: int) -> list[tuple[int, int]]:
    """Half-open cell ranges of the ``k`` bins over an extent of ``n`` cells."""
    if n >= k:
        q, r = divmod(n, k)
        edges, start = [], 0
        for i in range(k):
            size = q + 1 if i < r else q
            edges.append((start, start + size))
            start += size
        return edges
    return [((i * n) // k, (i * n) // k + 1) for i in range(k)]


def roi_pool_forward(feature: np.ndarray, spec: RoISpec):
    """Returns ``(out (R, C, Ho, Wo), cache)``; ``cache.collapsed`` lists collapsed boxes."""
    if feature.ndim != 4:
        raise ShapeError("roi_pool expects an (N, C, H, W) feature map")
    n, c, h, w = feature.shape
    boxes = np.asarray(spec.boxes, dtype=np.float64).reshape(-1, 4)
    bidx = np.asarray(spec.batch_index, dtype=np.int64).reshape(-1)
    if len(boxes) != len(bidx):
        raise ShapeError("one batch index per box is required")
    if len(bidx) and (bidx.min() < 0 or bidx.max() >= n):
        raise ShapeError("batch index out of range")
    ho, wo = spec.output_size
    out = np.empty((len(boxes), c, ho, wo))
    argmax = np.empty((len(boxes), c, ho, wo), dtype=np.int64)  # flat index into feature[b, ch]
    collapsed = []
    chans = np.arange(c)
    for r, (box, b) in enumerate(zip(boxes, bidx)):
        y0, x0, y1, x1, flag = quantize_box(box, h, w)
        if flag:
            collapsed.append(r)
        ybins = bin_edges(y1 - y0, ho)
        xbins = bin_edges(x1 - x0, wo)
        fmap = feature[b]
        for i, (ys, ye) in enumerate(ybins):
            for j, (xs, xe) in enumerate(xbins):
                region = fmap[:, y0 + ys:y0 + ye, x0 + xs:x0 + xe].reshape(c, -1)
                k = region.argmax(axis=1)
                out[r, :, i, j] = region[chans, k]
                bw = xe - xs
                argmax[r, :, i, j] = (y0 + ys + k // bw) * w + (x0 + xs + k % bw)
    return out, RoIPoolCache(feature.shape, bidx, argmax, collapsed)


@dataclass
class RoIPoolCache:
    feature_shape: tuple[int, ...]
    batch_index: np.ndarray
    argmax: np.ndarray
    collapsed: list


def roi_pool_backward(dout: np.ndarray, cache: RoIPoolCache) -> np.ndarray:
    n, c, h, w = cache.feature_shape
    dfeat = np.zeros((n, c, h * w))
    rr, cc = cache.argmax.shape[:2]
    b = np.broadcast_to(cache.batch_index[:, None, None, None], cache.argmax.shape)
    ch = np.broadcast_to(np.arange(cc)[None, :, None, None], cache.argmax.shape)
    np.add.at(dfeat, (b.ravel(), ch.ravel(), cache.argmax.ravel()), dout.ravel())
    return dfeat.reshape(n, c, h, w)
