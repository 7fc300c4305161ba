"""Scanline polygon rasterization on the pixel-centre grid.

Pixel ``(row, col)`` is sampled at ``(col + 0.5, row + 0.5)``. A sample is
inside when a ray towards +x crosses the boundary an odd number of times,
with the half-open rule ``y_a <= py < y_b`` for each edge. Edges are put in
canonical endpoint order before the intersection is computed, so two
polygons sharing an edge see bit-identical crossings and every sample on a
shared edge lands in exactly one of them.
"""

from __future__ import annotations

import numpy as np

_ROW_CHUNK = 64


def _canonical_edges(poly: np.ndarray) -> np.ndarray:
    """Edges as rows ``(ya, xa, yb, xb)`` with ``(ya, xa) <= (yb, xb)`` lexicographically."""
    p = np.asarray(poly, dtype=np.float64)
    q = np.roll(p, -1, axis=0)
    swap = (p[:, 1] > q[:, 1]) | ((p[:, 1] == q[:, 1]) & (p[:, 0] > q[:, 0]))
    a = np.where(swap[:, None], q, p)
    b = np.where(swap[:, None], p, q)
    edges = np.stack([a[:, 1], a[:, 0], b[:, 1], b[:, 0]], axis=1)
    return edges[edges[:, 0] != edges[:, 2]]  # horizontal edges never cross a scanline


def scanline_crossings(poly: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Crossing x-coordinates of each edge with each scanline.

    Returns ``(hit, x)`` of shape ``(n_edges, len(py))``; ``x`` is only
    meaningful where ``hit``.
    """
    e = _canonical_edges(poly)
    ya, xa, yb, xb = (e[:, i:i + 1] for i in range(4))
    py = np.asarray(py, dtype=np.float64)[None, :]
    hit = (ya <= py) & (py < yb)
    with np.errstate(invalid="ignore", divide="ignore"):
        x = xa + (py - ya) * (xb - xa) / (yb - ya)
    return hit, x


def rasterize(polygon, width: int, height: int) -> np.ndarray:
    """Even-odd fill of a polygon onto a ``height x width`` boolean mask.

    ``polygon`` is an ``(n, 2)`` array of ``(x, y)`` vertices or any object
    with a ``polygon`` attribute holding one.
    """
    poly = np.asarray(getattr(polygon, "polygon", polygon), dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    if len(poly) < 3 or width <= 0 or height <= 0:
        return mask
    # restrict to rows/cols whose sample points can lie inside the bbox
    r0 = max(int(np.floor(poly[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.ceil(poly[:, 1].max() - 0.5)) + 1, height)
    c0 = max(int(np.floor(poly[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.ceil(poly[:, 0].max() - 0.5)) + 1, width)
    if r0 >= r1 or c0 >= c1:
        return mask
    px = np.arange(c0, c1, dtype=np.float64) + 0.5
    for start in range(r0, r1, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, r1)
        py = np.arange(start, stop, dtype=np.float64) + 0.5
        hit, x = scanline_crossings(poly, py)
        # crossings strictly right of each sample, summed over edges
        right = hit[:, :, None] & (x[:, :, None] > px[None, None, :])
        mask[start:stop, c0:c1] = (right.sum(axis=0) & 1).astype(bool)
    return mask


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise in x-right, y-up axes)."""
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2))
            or (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2)))


def is_simple(poly) -> bool:
    """True when no two non-adjacent edges touch (adjacent edges may not overlap either)."""
    p = [tuple(float(c) for c in v) for v in np.asarray(poly, dtype=np.float64)]
    n = len(p)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = p[i], p[(i + 1) % n]
        if a1 == a2:
            return False
        for j in range(i + 1, n):
            b1, b2 = p[j], p[(j + 1) % n]
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent: only the shared vertex may be common; reject fold-backs
                shared = a2 if j == i + 1 else a1
                other_a = a1 if j == i + 1 else a2
                other_b = b2 if j == i + 1 else b1
                ux, uy = other_a[0] - shared[0], other_a[1] - shared[1]
                vx, vy = other_b[0] - shared[0], other_b[1] - shared[1]
                if ux * vy - uy * vx == 0 and ux * vx + uy * vy > 0:
                    return False
                continue
            if _segments_cross(a1, a2, b1, b2):
                return False
    return True
