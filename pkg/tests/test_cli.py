from __future__ import annotations

import csv
import shutil
import subprocess
import sys

import numpy as np
import pytest
import yaml

from aurk.cli import main
from aurk.geometry.landmarks import write_landmark_file
from aurk.nn.checkpoint import load_checkpoint, save_checkpoint
from aurk.nn.model import AURCNN
from aurk.partition import load_partition_table, read_mean_box_csv
from aurk.pipeline import _model_config
from aurk.config import load_config
from conftest import faces

SMALL = {
    "resolution": 64, "epochs": 2, "seed": 4,
    "synth": {"n_frames": 160, "n_subjects": 2, "mean_duration": 12, "base_rate": 0.4},
    "split": {"held_out_subjects": [1]},
    "dynamic_opts": {"epochs": 1, "skip": 1, "T": 4, "window_stride": 20, "flow_length": 2},
}


def _write_cfg(d, **over):
    cfg = yaml.safe_load(yaml.safe_dump(SMALL))
    for k, v in over.items():
        if isinstance(v, dict):
            cfg.setdefault(k, {}).update(v)
        else:
            cfg[k] = v
    d.mkdir(parents=True, exist_ok=True)
    (d / "run.yaml").write_text(yaml.safe_dump(cfg))
    return str(d / "run.yaml")


def _run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """Synthetic data with its box cache, shared by the tests below."""
    d = tmp_path_factory.mktemp("run")
    cfg = _write_cfg(d)
    assert _run("synth", "--config", cfg) == 0
    assert _run("partition", "--config", cfg) == 0
    return d


def _copy(run_dir, tmp_path, **over):
    d = tmp_path / "r"
    shutil.copytree(run_dir / "data", d / "data")
    shutil.copytree(run_dir / "cache", d / "cache")
    return d, _write_cfg(d, **over)


def test_print_config(capsys):
    assert _run("train", "--print-config", "--seed", "9", "--mean-box") == 0
    dumped = yaml.safe_load(capsys.readouterr().out)
    assert dumped["seed"] == 9 and dumped["mean_box"] is True
    assert dumped["epochs"] == 25 and dumped["batch_size"] == 5
    assert dumped["optimizer"]["weight_decay"] == 0.0005


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("epochz: 3\n")
    assert _run("train", "--config", tmp_path / "c.yaml") == 2
    assert "unknown keys" in capsys.readouterr().err


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "aurk.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("partition", "synth", "train", "infer", "eval", "stats", "mean-box"):
        assert cmd in out.stdout


def test_bp4d_partition_cache(tmp_path, capsys):
    lm_path = tmp_path / "landmarks.csv"
    write_landmark_file(lm_path, faces(10, size=256, seed=3))
    cfg = _write_cfg(tmp_path, dataset="bp4d", resolution=256, paths={"landmarks": str(lm_path)})
    assert _run("partition", "--config", cfg, "--overlays", 2) == 0
    assert "0 cache hits, 10 computed" in capsys.readouterr().out
    assert len(list((tmp_path / "cache").rglob("*.json"))) == 10
    with open(tmp_path / "out" / "boxes.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 90
    assert sorted((tmp_path / "out" / "overlays").iterdir())[0].suffix == ".png"
    assert _run("partition", "--config", cfg) == 0
    assert "10 cache hits, 0 computed" in capsys.readouterr().out

    # an edited table gets a new digest and a full recompute
    text = load_partition_table("bp4d")
    from aurk.partition import format_partition_table
    edited = format_partition_table(text).replace("rois = 1 2 3 4 5 6 8", "rois = 1 2 3 4 5 6 7 8", 1)
    (tmp_path / "edited.table").write_text(edited)
    cfg2 = _write_cfg(tmp_path / "edited", dataset="bp4d", resolution=256,
                      paths={"landmarks": str(lm_path), "partition_table": str(tmp_path / "edited.table"),
                             "cache_dir": str(tmp_path / "cache")})
    assert _run("partition", "--config", cfg2) == 0
    assert "0 cache hits, 10 computed" in capsys.readouterr().out
    assert len(list((tmp_path / "cache").rglob("*.json"))) == 20

    # mean boxes reproduce the batch mean of the per-frame boxes
    assert _run("mean-box", "--config", cfg) == 0
    table = load_partition_table("bp4d")
    arr = np.array([[float(r[k]) for k in ("y_min", "x_min", "y_max", "x_max")] for r in rows]).reshape(10, 9, 4)
    got = read_mean_box_csv(tmp_path / "out" / "mean_boxes.csv")
    from aurk.partition import mean_box_table_from_rows
    np.testing.assert_allclose(mean_box_table_from_rows(got, table).boxes, arr.mean(axis=0), rtol=0, atol=1e-9)


def test_missing_cache_names_partition(run_dir, tmp_path, capsys):
    d = tmp_path / "nocache"
    shutil.copytree(run_dir / "data", d / "data")
    cfg = _write_cfg(d)
    assert _run("train", "--config", cfg) == 2
    assert "aurk partition" in capsys.readouterr().err


def test_train_epochs_zero_is_init(run_dir, tmp_path):
    d, cfg = _copy(run_dir, tmp_path, epochs=0)
    assert _run("train", "--config", cfg) == 0
    params, meta, state = load_checkpoint(d / "out" / "model.ckpt")
    c = load_config(cfg)
    init = AURCNN(_model_config(c, load_partition_table("synthetic")), seed=c.seed).params
    assert list(params) == list(init)
    for k in init:
        np.testing.assert_array_equal(params[k].value, init[k].value)


def test_train_deterministic_and_logged(run_dir, tmp_path):
    d, cfg = _copy(run_dir, tmp_path)
    assert _run("train", "--config", cfg) == 0
    first = (d / "out" / "model.ckpt").read_bytes()
    assert _run("train", "--config", cfg) == 0
    assert (d / "out" / "model.ckpt").read_bytes() == first
    with open(d / "out" / "loss_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and {r["stage"] for r in rows} == {"static"}
    assert len({r["epoch"] for r in rows}) == 2


def test_zero_weights_predict_nothing(run_dir, tmp_path):
    d, cfg = _copy(run_dir, tmp_path, epochs=0)
    assert _run("train", "--config", cfg) == 0
    params, meta, _ = load_checkpoint(d / "out" / "model.ckpt")
    for p in params.values():
        p.value[...] = 0.0
    save_checkpoint(d / "zero.ckpt", params, meta)
    assert _run("infer", "--config", cfg, "--checkpoint", d / "zero.ckpt") == 0
    with open(d / "out" / "predictions.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "frame_id" and len(rows) == 161
    assert all(v == "0" for r in rows[1:] for v in r[1:])


def test_infer_eval_stats(run_dir, tmp_path, capsys):
    d, cfg = _copy(run_dir, tmp_path)
    assert _run("train", "--config", cfg) == 0
    assert _run("infer", "--config", cfg, "--split", "test") == 0
    first = (d / "out" / "predictions.csv").read_bytes()
    assert _run("infer", "--config", cfg, "--split", "test") == 0
    assert (d / "out" / "predictions.csv").read_bytes() == first
    assert first.decode().splitlines()[1].startswith("s01_")

    # ground truth against itself is perfect
    assert _run("eval", "--config", cfg, "--predictions", d / "data" / "labels.csv") == 0
    assert capsys.readouterr().out.splitlines()[-1] == "Avg\t100.0"
    assert _run("eval", "--config", cfg, "--method", "static") == 0
    with open(d / "out" / "f1_report.csv") as fh:
        rep = list(csv.reader(fh))
    assert rep[0] == ["AU", "static"] and rep[-1][0] == "Avg"

    assert _run("stats", "--config", cfg) == 0
    with open(d / "out" / "duration_stats.csv") as fh:
        dur = list(csv.reader(fh))
    avg = [float(v) for v, c in zip(dur[1][1:], dur[2][1:]) if int(c) > 0]
    assert avg and all(abs(v - 12) <= 1 for v in avg)
    assert (d / "out" / "area_stats.csv").exists()


def test_eval_misaligned(run_dir, tmp_path, capsys):
    d, cfg = _copy(run_dir, tmp_path)
    (d / "p.csv").write_text("frame_id,au_1,au_4,au_6,au_12,au_17,au_23\nghost,0,0,0,0,0,0\n")
    assert _run("eval", "--config", cfg, "--predictions", d / "p.csv") == 2
    assert "ghost" in capsys.readouterr().err


def test_infer_profile_mismatch(run_dir, tmp_path, capsys):
    d, cfg = _copy(run_dir, tmp_path, epochs=0)
    assert _run("train", "--config", cfg) == 0
    other = _write_cfg(d, dataset="bp4d")
    assert _run("infer", "--config", other) == 2
    assert "trained for" in capsys.readouterr().err


def test_mean_box_mode(run_dir, tmp_path):
    d, cfg = _copy(run_dir, tmp_path, epochs=1)
    assert _run("mean-box", "--config", cfg) == 0
    assert _run("train", "--config", cfg, "--mean-box") == 0
    _, meta, _ = load_checkpoint(d / "out" / "model.ckpt")
    rows = read_mean_box_csv(d / "out" / "mean_boxes.csv")
    assert np.asarray(meta["mean_boxes"]).shape == (9, 4)
    assert meta["mean_boxes"][0] == list(rows[0].boxes[0])
    assert _run("infer", "--config", cfg) == 0


@pytest.mark.parametrize("mode", ["convlstm", "two_stream"])
def test_dynamic_modes(run_dir, tmp_path, mode):
    d, cfg = _copy(run_dir, tmp_path, epochs=1)
    assert _run("train", "--config", cfg, "--dynamic", mode) == 0
    params, meta, _ = load_checkpoint(d / "out" / "model.ckpt")
    assert meta["dynamic"] == mode
    assert any(k.startswith("dyn." if mode == "convlstm" else "fuse.") for k in params)
    assert _run("infer", "--config", cfg, "--split", "test") == 0


def test_pipeline_reports_are_reproducible(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        cfg = _write_cfg(d, synth={"n_frames": 40}, epochs=1)
        for cmd in ("synth", "partition", "train", "infer", "eval", "stats"):
            assert _run(cmd, "--config", cfg) == 0, cmd
        outs.append([(d / "out" / f).read_bytes() for f in
                     ("model.ckpt", "predictions.csv", "f1_report.csv", "f1_report.json", "duration_stats.csv")])
    assert outs[0] == outs[1]
