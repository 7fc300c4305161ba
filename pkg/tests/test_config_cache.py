from __future__ import annotations

import numpy as np
import pytest
import yaml

from aurk.cache import BoxCache, frame_key
from aurk.config import RunConfig, config_from_dict, load_config
from aurk.errors import CacheMissError, FormatError, VersionError
from aurk.partition import face_boxes, parse_partition_table, format_partition_table
from conftest import faces


def test_defaults():
    cfg = RunConfig().validate()
    assert (cfg.epochs, cfg.batch_size, cfg.resolution) == (25, 5, 512)
    o = cfg.optimizer
    assert (o.base_lr, o.momentum, o.weight_decay, o.lr_decay, o.lr_step) == (0.001, 0.9, 0.0005, 0.1, 10)
    assert (cfg.dynamic_opts.skip, cfg.dynamic_opts.T, cfg.dynamic_opts.flow_length) == (4, 10, 10)


def test_dump_round_trip():
    cfg = config_from_dict({"epochs": 3, "synth": {"n_frames": 12}, "split": {"held_out_subjects": [2]}})
    again = config_from_dict(yaml.safe_load(cfg.dump()))
    assert again == cfg


@pytest.mark.parametrize("data,err", [
    ({"epoch": 3}, FormatError),
    ({"synth": {"frames": 3}}, FormatError),
    ({"dataset": "ck+"}, FormatError),
    ({"dynamic": "crf"}, FormatError),
    ({"backbone": "resnet101"}, FormatError),
    ({"split": {"folds": 3, "held_out_fold": 3}}, FormatError),
    ({"input_scale": "unit"}, FormatError),
    ({"version": 2}, VersionError),
    ({"optimizer": 0.1}, FormatError),
])
def test_validation(data, err):
    with pytest.raises(err):
        config_from_dict(data)


def test_relative_paths(tmp_path):
    (tmp_path / "run.yaml").write_text("paths:\n  data_dir: d\n  out_dir: /abs/out\n")
    cfg = load_config(tmp_path / "run.yaml")
    assert cfg.paths.data_dir == str(tmp_path / "d")
    assert cfg.paths.out_dir == "/abs/out"
    assert cfg.paths.cache_dir == str(tmp_path / "cache")


def test_bad_yaml(tmp_path):
    (tmp_path / "x.yaml").write_text("epochs: [1\n")
    with pytest.raises(FormatError):
        load_config(tmp_path / "x.yaml")


def test_cache_round_trip_and_counters(tmp_path, bp4d):
    cache = BoxCache(tmp_path, bp4d, "layout")
    lm = faces(1)[0]
    assert cache.get(lm) is None
    boxes = face_boxes(lm, bp4d)
    cache.put(lm, boxes)
    entry = cache.get(lm)
    assert entry.frame_id == lm.frame_id
    assert [b.as_tuple() for b in entry.boxes] == [b.as_tuple() for b in boxes]
    assert [b.side for b in entry.boxes] == [b.side for b in boxes]
    assert (cache.hits, cache.misses) == (1, 1)
    assert len(list(tmp_path.rglob("*.json"))) == 1
    assert frame_key(lm) != frame_key(faces(2)[1])


def test_cache_invalidated_by_table_change(tmp_path, bp4d):
    lm = faces(1)[0]
    BoxCache(tmp_path, bp4d).put(lm, face_boxes(lm, bp4d))
    text = format_partition_table(bp4d)
    edited = parse_partition_table(text.replace("rois = 1 2 3 4 5 6 8", "rois = 1 2 3 4 5 6 7 8", 1))
    assert edited.digest != bp4d.digest
    with pytest.raises(CacheMissError, match="aurk partition"):
        BoxCache(tmp_path, edited).require(lm)


def test_cache_rejects_digest_mismatch_in_entry(tmp_path, bp4d):
    lm = faces(1)[0]
    c = BoxCache(tmp_path, bp4d)
    c.put(lm, face_boxes(lm, bp4d))
    p = next(tmp_path.rglob("*.json"))
    p.write_text(p.read_text().replace(bp4d.digest, "0" * 64))
    assert c.get(lm) is None
