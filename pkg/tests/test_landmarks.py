from __future__ import annotations

import numpy as np
import pytest

from aurk.errors import FormatError
from aurk.geometry.landmarks import (MIRROR_INDEX, Landmarks68, mirror_landmarks, parse_landmarks,
                                     read_landmark_file, template_landmarks, write_landmark_file)


def record(points, w=512, h=512, fid="f0"):
    flat = [str(v) for v in np.asarray(points, dtype=float).reshape(-1)]
    return ",".join([fid, *flat, str(w), str(h)])


def test_inside_points_pass_through(template):
    lm = parse_landmarks(record(template.points))
    np.testing.assert_array_equal(lm.points, template.points)
    assert lm.clamp_count == 0
    assert (lm.width, lm.height, lm.frame_id) == (512, 512, "f0")


def test_67_pairs_is_format_error(template):
    with pytest.raises(FormatError):
        parse_landmarks(record(template.points[:67]))


def test_non_numeric_is_format_error(template):
    fields = record(template.points).split(",")
    fields[5] = "abc"
    with pytest.raises(FormatError, match="non-numeric"):
        parse_landmarks(fields)


def test_out_of_bounds_point_is_clamped(template):
    pts = template.points.copy()
    pts[10] = (600, 300)
    lm = parse_landmarks(record(pts))
    np.testing.assert_array_equal(lm.points[10], [511, 300])
    assert lm.clamp_count == 1


def test_landmarks_reject_bad_shapes():
    with pytest.raises(FormatError):
        Landmarks68(np.zeros((5, 2)), 10, 10)
    with pytest.raises(FormatError):
        Landmarks68(np.full((68, 2), np.nan), 10, 10)


def test_file_round_trip(tmp_path, template):
    recs = [template, template.translated(3.0, -2.0)]
    recs[1].frame_id = "shifted"
    p = tmp_path / "lm.csv"
    write_landmark_file(p, recs)
    back = read_landmark_file(p)
    assert [r.frame_id for r in back] == ["template", "shifted"]
    for a, b in zip(recs, back):
        np.testing.assert_array_equal(a.points, b.points)


def test_read_reports_line_number(tmp_path, template):
    p = tmp_path / "lm.csv"
    p.write_text(record(template.points) + "\n" + record(template.points[:60], fid="bad") + "\n")
    with pytest.raises(FormatError, match=r"lm\.csv:2.*'bad'"):
        read_landmark_file(p)


def test_mirror_index_is_an_involution():
    m = np.array(MIRROR_INDEX)
    assert sorted(m) == list(range(68))
    np.testing.assert_array_equal(m[m], np.arange(68))


def test_template_is_mirror_symmetric(template):
    back = mirror_landmarks(template)
    # the template is symmetric about x = 256, mirroring maps x -> 511 - x
    np.testing.assert_allclose(back.points[:, 0] + 1.0, template.points[:, 0], atol=1e-9)
    np.testing.assert_allclose(back.points[:, 1], template.points[:, 1])
