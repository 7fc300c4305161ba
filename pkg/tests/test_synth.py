from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aurk.errors import FormatError
from aurk.evaluation import duration_segments, duration_stats, run_lengths
from aurk.partition import face_boxes
from aurk.synth import SynthConfig, au_pattern, generate, load_dataset, save_dataset, segment_timeline

SMALL = dict(n_frames=30, n_subjects=1, size=96, base_rate=0.5, mean_duration=3)


@pytest.fixture(scope="module")
def small(synthetic_table):
    return generate(SynthConfig(seed=7, **SMALL), synthetic_table)


def test_seed_is_deterministic(synthetic_table, small):
    again = generate(SynthConfig(seed=7, **SMALL), synthetic_table)
    assert again.images.tobytes() == small.images.tobytes()
    np.testing.assert_array_equal(again.labels, small.labels)
    assert [lm.points.tobytes() for lm in again.landmarks] == [lm.points.tobytes() for lm in small.landmarks]
    other = generate(SynthConfig(seed=8, **SMALL), synthetic_table)
    assert other.images.tobytes() != small.images.tobytes()


def test_texture_energy_stays_in_group_box(synthetic_table, small):
    cfg = SynthConfig(seed=7, **SMALL)
    margin = cfg.amplitude / 10.0
    size = cfg.size
    for j, au in enumerate(synthetic_table.au_order):
        pat = au_pattern(j, size, size)
        gid = next(g.group_id for g in synthetic_table.groups if au in g.aus)
        active = np.flatnonzero(small.labels[:, j])
        assert len(active)
        for i in active:
            resp = (small.images[i].astype(float) * pat).sum(axis=0)
            inside = np.zeros((size, size), bool)
            for b in face_boxes(small.landmarks[i], synthetic_table):
                if b.group_id == gid:
                    y0, x0, y1, x1 = (int(v) for v in b.as_tuple())
                    inside[y0:y1, x0:x1] = True
            assert resp[inside].mean() - abs(resp[~inside].mean()) >= margin, (au, i)


def test_zero_rate_never_fires(synthetic_table):
    ds = generate(SynthConfig(n_frames=20, n_subjects=2, size=96, base_rate=0.6, mean_duration=2,
                              base_rates={12: 0.0}, seed=1), synthetic_table)
    j = synthetic_table.au_index[12]
    assert ds.labels[:, j].sum() == 0
    assert ds.labels.sum() > 0


def test_subjects_and_ids(small, synthetic_table):
    ds = generate(SynthConfig(n_frames=7, n_subjects=3, size=96, seed=2), synthetic_table)
    assert ds.subjects.tolist() == [0, 0, 0, 1, 1, 2, 2]
    assert ds.frame_ids[3] == "s01_f0000"
    assert ds.images.shape == (7, 3, 96, 96) and ds.images.dtype == np.uint8
    with pytest.raises(ValueError):
        generate(SynthConfig(n_frames=2, n_subjects=3), synthetic_table)


@given(st.integers(0, 10_000), st.integers(2, 40), st.floats(0.05, 0.9))
def test_timeline_runs_are_complete_pairs(seed, d, rate):
    rng = np.random.default_rng(seed)
    tl = segment_timeline(rng, 400, rate, d)
    runs = run_lengths(tl)
    assert len(runs) % 2 == 0
    if len(runs):
        assert duration_segments(tl)[0] == pytest.approx(d)


def test_timeline_edge_rates(rng):
    assert segment_timeline(rng, 50, 0.0, 5).sum() == 0
    assert segment_timeline(rng, 50, 1.0, 5).sum() == 50


def test_planted_duration_recovered():
    rng = np.random.default_rng(3)
    labels = np.stack([segment_timeline(rng, 900, 0.4, 30) for _ in range(6)], axis=1)
    stats = duration_stats(labels, list(range(6)))
    assert np.all(np.abs(stats.avg_duration - 30) <= 1)


def test_save_load_round_trip(tmp_path, small, synthetic_table):
    save_dataset(small, tmp_path / "d", SynthConfig(seed=7, **SMALL))
    back = load_dataset(tmp_path / "d", synthetic_table.au_order)
    assert back.frame_ids == small.frame_ids
    np.testing.assert_array_equal(back.images, small.images)
    np.testing.assert_array_equal(back.labels, small.labels)
    np.testing.assert_array_equal(back.subjects, small.subjects)
    np.testing.assert_allclose(back.landmarks[5].points, small.landmarks[5].points, atol=1e-9)
    assert (tmp_path / "d" / "synth.json").exists()


def test_load_rejects_unknown_subject(tmp_path, small):
    save_dataset(small, tmp_path / "d")
    (tmp_path / "d" / "subjects.csv").write_text("frame_id,subject\nnope,1\n")
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "d")
