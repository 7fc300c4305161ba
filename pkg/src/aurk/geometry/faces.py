"""Random frontal faces around the bundled template.

Used by the synthetic data generator and by property tests. A face is the
template under a similarity transform (scale, small in-plane rotation,
translation) plus independent per-landmark jitter.
"""

from __future__ import annotations

import numpy as np

from aurk.geometry.landmarks import Landmarks68, template_points


def random_face(rng: np.random.Generator, width: int = 512, height: int = 512, *,
                jitter: float = 2.0, scale_range: tuple[float, float] = (0.86, 0.98),
                max_rotation_deg: float = 5.0, frame_id: str = "") -> Landmarks68:
    """Draw one valid face. ``jitter`` is the per-point std in pixels at 512 px."""
    s_img = np.array([width, height], dtype=np.float64) / 512.0
    tpl = template_points()
    centre = np.array([256.0, 300.0])
    scale = rng.uniform(*scale_range)
    theta = np.deg2rad(rng.uniform(-max_rotation_deg, max_rotation_deg))
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    pts = (tpl - centre) @ rot.T * scale + centre
    pts += rng.normal(0.0, jitter, size=pts.shape)
    # keep the face inside the frame with room for the forehead points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    slack_lo = np.array([2.0, 60.0]) - lo
    slack_hi = np.array([509.0, 509.0]) - hi
    shift = rng.uniform(np.minimum(slack_lo, 0.0), np.maximum(slack_hi, 0.0))
    shift = np.clip(shift, slack_lo, slack_hi)
    pts = (pts + shift) * s_img
    return Landmarks68(pts, width, height, frame_id)
