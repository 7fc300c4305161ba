from __future__ import annotations

import numpy as np
import pytest

from aurk.errors import DegenerateRegionError, FormatError
from aurk.geometry.landmarks import Landmarks68
from aurk.geometry.layout import (N_BASIC_ROIS, default_layout, derive_points, label_map,
                                  parse_layout, partition_basic_rois)
from aurk.geometry.raster import is_simple, polygon_area
from conftest import faces


def test_mid_13_29_is_the_mean(template):
    pts = template.points.copy()
    pts[13] = (100, 200)
    pts[29] = (120, 240)
    dp = derive_points(Landmarks68(pts, 512, 512))
    np.testing.assert_array_equal(dp["mid_13_29"], [110, 220])


def test_coincident_points(template):
    pts = template.points.copy()
    pts[13] = pts[29] = (50, 50)
    np.testing.assert_array_equal(derive_points(Landmarks68(pts, 512, 512))["mid_13_29"], [50, 50])


def test_all_points_at_origin():
    dp = derive_points(Landmarks68(np.zeros((68, 2)), 512, 512))
    layout = default_layout()
    for p in layout.points:
        if p.op in ("mid", "lerp", "offset"):
            np.testing.assert_array_equal(dp[p.name], [0, 0])
        elif p.op in ("top", "left"):
            np.testing.assert_array_equal(dp[p.name], [0, 0])


def test_every_affine_point_follows_its_formula(template):
    lm = template.translated(0.0, 0.0)
    dp = derive_points(lm)
    get = lambda t: dp[t] if not t.startswith("L") else lm.points[int(t[1:])]
    for p in default_layout().points:
        if p.op == "mid":
            np.testing.assert_allclose(dp[p.name], (get(p.args[0]) + get(p.args[1])) / 2)
        elif p.op == "offset":
            a, b, c = (get(t) for t in p.args)
            np.testing.assert_allclose(dp[p.name], a + p.weight * (b - c))


def test_template_partition_tiles_the_image(template):
    rois = partition_basic_rois(template)
    assert [r.roi_no for r in rois] == list(range(1, N_BASIC_ROIS + 1))
    owner, claims = label_map(rois, 512, 512)
    assert (claims == 1).all()
    assert set(np.unique(owner)) == set(range(1, 44))


def test_polygons_are_simple_and_consistently_oriented(template):
    for r in partition_basic_rois(template):
        assert len(r.polygon) >= 3
        assert is_simple(r.polygon)
        assert polygon_area(r.polygon) < 0


def test_random_faces_tile_exactly():
    for lm in faces(20, size=160, seed=5):
        owner, claims = label_map(partition_basic_rois(lm), lm.width, lm.height)
        assert (claims == 1).all()
        assert owner.min() == 1


def test_collinear_landmarks_are_degenerate():
    pts = np.stack([np.linspace(10, 500, 68), np.full(68, 256.0)], axis=1)
    with pytest.raises(DegenerateRegionError) as e:
        partition_basic_rois(Landmarks68(pts, 512, 512))
    assert 1 <= e.value.roi_no <= 43


def test_translation_moves_every_interior_vertex(template):
    # dyadic coordinates and integer shifts keep the arithmetic exact
    pts = np.round(template.points * 0.75 * 4) / 4 + 40
    a = Landmarks68(pts, 512, 512)
    dx, dy = 7.0, 5.0
    b = a.translated(dx, dy)
    layout = default_layout()
    ra, rb = partition_basic_rois(a), partition_basic_rois(b)
    for pa, pb in zip(ra, rb):
        for tok, va, vb in zip(pa.tokens, pa.polygon, pb.polygon):
            kind = layout.vertex_kind(tok)
            if kind in ("landmark", "derived"):
                np.testing.assert_array_equal(vb - va, [dx, dy])
            elif kind == "corner":
                np.testing.assert_array_equal(va, vb)
            else:  # border projection slides along the border only
                d = vb - va
                assert d[0] in (0.0, dx) and d[1] in (0.0, dy)
                assert (va[0] in (0.0, 512.0)) or (va[1] in (0.0, 512.0))


def test_partition_is_deterministic(template):
    a = partition_basic_rois(template)
    b = partition_basic_rois(template.translated(0.0, 0.0))
    for x, y in zip(a, b):
        assert x.polygon.tobytes() == y.polygon.tobytes()


def test_layout_parser_rejects_unknown_tokens():
    text = "format = roi_layout\nversion = 1\n[rois]\n1 = L0 L1 nowhere\n"
    with pytest.raises(FormatError, match="nowhere"):
        parse_layout(text)


def test_layout_parser_requires_all_43():
    text = "format = roi_layout\nversion = 1\n[rois]\n1 = L0 L1 L2\n"
    with pytest.raises(FormatError, match="1..43"):
        parse_layout(text)


def test_layout_mirror_pairs_are_consistent(template):
    """The chart is left/right symmetric on the symmetric template."""
    rois = {r.roi_no: r for r in partition_basic_rois(template)}
    pairs = [(1, 2), (5, 6), (8, 9), (12, 13), (40, 41), (42, 43), (16, 19), (17, 18), (22, 23),
             (21, 24), (25, 28), (26, 27), (31, 32), (29, 30), (35, 36), (33, 34), (14, 15), (38, 39)]
    for a, b in pairs:
        assert rois[a].area == pytest.approx(rois[b].area, rel=1e-9)
