from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aurk.errors import EmptyDatasetError, EmptyMaskError, FormatError, MissingRegionError
from aurk.geometry.layout import partition_basic_rois
from aurk.partition import (AUBoundingBox, AUMask, MeanBoxAccumulator, area_stats, compose_au_mask,
                            compute_mean_boxes, face_boxes, format_box_tuple, format_partition_table,
                            mask_to_boxes, mean_box_table_from_rows, parse_box_tuples,
                            parse_partition_table, partition_face, published_mean_boxes,
                            read_mean_box_csv, scale_box_to_feature, write_mean_box_csv)
from conftest import faces


def test_table_shapes(bp4d, disfa):
    assert len(bp4d.groups) == 8 and bp4d.L == 22 and bp4d.R == 9
    assert len(disfa.groups) == 6 and disfa.L == 12 and disfa.R == 7
    assert 7 not in disfa.group_ids and 8 not in disfa.group_ids


def test_table_text_round_trip(bp4d):
    again = parse_partition_table(format_partition_table(bp4d))
    assert again.groups == bp4d.groups
    assert again.au_order == bp4d.au_order


@pytest.mark.parametrize("text,msg", [
    ("format = au_partition\nversion = 2\n", "version"),
    ("format = au_partition\nversion = 1\nau_order = 1\n[group 1]\naus = 1\nrois = 44\n", "1..43"),
    ("format = au_partition\nversion = 1\nau_order = 1\n[group 1]\naus = 1\nrois = 1\nfetched_by = 9\n",
     "missing group"),
    ("format = au_partition\nversion = 1\nau_order = 1\n[group 1]\naus = 2\nrois = 1\n", "au_order"),
])
def test_table_validation(text, msg):
    with pytest.raises(FormatError, match=msg):
        parse_partition_table(text)


@pytest.fixture(scope="module")
def template_rois(template):
    rois = partition_basic_rois(template)
    return {r.roi_no: r.mask(512, 512) for r in rois}


def test_group7_is_union_of_its_rois(bp4d, template_rois):
    m = compose_au_mask(7, template_rois, bp4d)
    expect = np.zeros((512, 512), bool)
    for r in range(29, 37):
        expect |= template_rois[r]
    np.testing.assert_array_equal(m.bitmap, expect)


def test_single_roi_group(template_rois):
    t = parse_partition_table("format = au_partition\nversion = 1\nau_order = 1\n"
                              "[group 1]\naus = 1\nrois = 20\n")
    np.testing.assert_array_equal(compose_au_mask(1, template_rois, t).bitmap, template_rois[20])


def test_missing_roi(bp4d, template_rois):
    partial = {k: v for k, v in template_rois.items() if k != 33}
    with pytest.raises(MissingRegionError):
        compose_au_mask(7, partial, bp4d)


def test_polygons_accepted_directly(bp4d, template):
    rois = partition_basic_rois(template)
    a = compose_au_mask(3, rois, bp4d, 512, 512)
    assert a.bitmap.any()


def test_rectangle_hull(bp4d):
    bm = np.zeros((64, 64), bool)
    bm[10:30, 20:40] = True
    (box,) = mask_to_boxes(AUMask(2, bm), bp4d)
    assert box.as_tuple() == (10, 20, 30, 40)


def test_empty_mask(bp4d):
    with pytest.raises(EmptyMaskError):
        mask_to_boxes(AUMask(2, np.zeros((8, 8), bool)), bp4d)


def test_symmetric_side_empty(bp4d):
    bm = np.zeros((16, 16), bool)
    bm[2:5, 1:4] = True
    with pytest.raises(EmptyMaskError, match="right"):
        mask_to_boxes(AUMask(1, bm), bp4d, center_x=8.0)


def test_box_counts(bp4d, disfa, template):
    assert len(face_boxes(template, bp4d)) == 9
    assert len(face_boxes(template, disfa)) == 7


def test_template_boxes(bp4d, template):
    got = {(b.group_id, b.side): b.as_tuple() for b in face_boxes(template, bp4d)}
    assert got[(1, "left")] == (42, 40, 226, 220)
    assert got[(1, "right")] == (42, 292, 226, 472)
    assert got[(7, "")] == (370, 114, 508, 398)


def test_tight_hull_and_containment(bp4d):
    for lm in faces(6, size=192, seed=11):
        part = partition_face(lm, bp4d)
        masks = {m.group_id: m.bitmap for m in part.masks}
        assert not (masks[7] & ~masks[6]).any()
        assert (masks[3] & masks[4]).any()
        left, right = part.boxes[0], part.boxes[1]
        assert left.x_max <= right.x_min
        for b in part.boxes:
            bm = masks[b.group_id]
            if b.side:
                cols = np.arange(bm.shape[1]) + 0.5
                cx = (lm.points[39, 0] + lm.points[42, 0]) / 2
                bm = bm & ((cols < cx) if b.side == "left" else (cols >= cx))[None, :]
            y0, x0, y1, x1 = (int(v) for v in b.as_tuple())
            assert bm[y0:y1, x0:x1].sum() == bm.sum()
            assert bm[y0].any() and bm[y1 - 1].any() and bm[:, x0].any() and bm[:, x1 - 1].any()


def test_scale_box():
    b = AUBoundingBox(1, 32, 64, 160, 320)
    assert scale_box_to_feature(b, 16).as_tuple() == (2, 4, 10, 20)
    assert scale_box_to_feature(b, 1).as_tuple() == b.as_tuple()
    t8 = scale_box_to_feature(AUBoundingBox(1, 30.4, 58.1, 140.3, 222.5), 16)
    np.testing.assert_allclose(t8.as_tuple(), (1.9, 3.63125, 8.76875, 13.90625), rtol=0, atol=1e-12)
    assert t8.space == "feature"
    with pytest.raises(ValueError):
        scale_box_to_feature(t8, 2)


def test_mean_of_two_frames():
    slots = ((1, ""),)
    mbt = compute_mean_boxes([[AUBoundingBox(1, 0, 0, 10, 10)], [AUBoundingBox(1, 2, 2, 12, 12)]], slots)
    np.testing.assert_array_equal(mbt.boxes, [[1, 1, 11, 11]])


def test_mean_single_frame_and_empty():
    b = [AUBoundingBox(1, 3.5, 1, 9, 7)]
    np.testing.assert_array_equal(compute_mean_boxes([b]).boxes, [b[0].as_tuple()])
    with pytest.raises(EmptyDatasetError):
        compute_mean_boxes([])


def test_streaming_mean_matches_batch(rng):
    data = rng.uniform(0, 512, size=(1000, 3, 4))
    frames = [[AUBoundingBox(g, *row) for g, row in zip((1, 1, 2), f)] for f in data]
    slots = ((1, "left"), (1, "right"), (2, ""))
    half = MeanBoxAccumulator(slots)
    other = MeanBoxAccumulator(slots)
    for f in frames[:400]:
        half.add(f)
    for f in frames[400:]:
        other.add(f)
    merged = half.merge(other).result()
    np.testing.assert_allclose(merged.boxes, data.mean(axis=0), rtol=0, atol=1e-9)


@given(st.lists(st.floats(0, 500), min_size=4, max_size=4))
def test_constant_stream_mean_is_constant(coords):
    b = [AUBoundingBox(3, *coords)]
    np.testing.assert_allclose(compute_mean_boxes([b] * 7).boxes[0], coords, rtol=1e-12, atol=1e-12)


def test_area_stats_examples():
    side = np.sqrt(17785.0)
    s = area_stats([[AUBoundingBox(1, 0, 0, side, side)]] * 3, 512, 512)
    assert s.percent_rounded() == [6.8]
    assert area_stats([[AUBoundingBox(2, 0, 0, 512, 512)]], 512, 512).percent_rounded() == [100.0]
    two = area_stats([[AUBoundingBox(2, 0, 0, 10, 10)], [AUBoundingBox(2, 0, 0, 10, 30)]], 64, 64)
    assert two.avg_area[0] == 200.0


def test_table8_group1_row_round_trips():
    row = next(r for r in published_mean_boxes("bp4d") if r.group_id == 1)
    assert row.boxes[0] == (30.4, 58.1, 140.3, 222.5)
    assert format_box_tuple(row.boxes[0]) == "(30.4, 58.1, 140.3, 222.5)"
    text = ", ".join(format_box_tuple(b) for b in row.boxes)
    assert text == row.box_text


def test_published_tables_parse():
    assert {r.group_id for r in published_mean_boxes("bp4d")} == {1, 2, 3, 5, 7, 8}
    assert len(published_mean_boxes("disfa")) > 0


def test_box_tuple_errors():
    with pytest.raises(FormatError):
        parse_box_tuples("(1, 2, 3)")
    with pytest.raises(FormatError):
        parse_box_tuples("(1, 2, 3, x)")
    with pytest.raises(FormatError):
        parse_box_tuples("garbage (1, 2, 3, 4)")


def test_mean_box_csv_round_trip(bp4d, rng):
    frames = []
    for _ in range(5):
        frames.append([AUBoundingBox(g, *rng.uniform(0, 500, 4)) for g, _ in bp4d.box_slots])
    mbt = compute_mean_boxes(frames, bp4d.box_slots)
    buf = io.StringIO()
    write_mean_box_csv(buf, mbt, bp4d)
    back = mean_box_table_from_rows(read_mean_box_csv(buf.getvalue()), bp4d)
    np.testing.assert_array_equal(back.boxes, mbt.boxes)
