"""The steps behind each CLI command, callable from Python.

Every step reads and writes the files documented in FORMATS.md under the
directories named in the run configuration.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from aurk import dynamic
from aurk.cache import BoxCache
from aurk.config import RunConfig
from aurk.errors import ShapeError, VersionError
from aurk.evaluation import (duration_stats, f1_per_au, write_f1_csv, write_report_json,
                             write_rows_csv)
from aurk.geometry.landmarks import Landmarks68, read_landmark_file
from aurk.geometry.layout import default_layout
from aurk.labels import assign_roi_labels_batch, read_label_file, write_label_file
from aurk.nn.checkpoint import load_checkpoint, save_checkpoint
from aurk.nn.model import AURCNN, BACKBONES, ModelConfig
from aurk.nn.ops import Param
from aurk.partition import (AUPartitionTable, MeanBoxTable, area_stats, compute_mean_boxes,
                            load_partition_table, mean_box_table_from_rows,
                            partition_face, read_mean_box_csv, write_mean_box_csv)
from aurk.synth import SynthConfig, SynthDataset, generate, load_dataset, save_dataset
from aurk.train import TrainConfig, frame_predictions, input_stats, predict_logits, to_input, train

log = logging.getLogger("aurk")

BOXES_FILE = "boxes.csv"
MEAN_BOX_FILE = "mean_boxes.csv"
CHECKPOINT_FILE = "model.ckpt"
LOSS_LOG_FILE = "loss_log.csv"
PREDICTIONS_FILE = "predictions.csv"


def table_for(cfg: RunConfig) -> AUPartitionTable:
    return load_partition_table(cfg.paths.partition_table or cfg.dataset)


def _out(cfg: RunConfig) -> Path:
    d = Path(cfg.paths.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _landmarks_path(cfg: RunConfig) -> Path:
    return Path(cfg.paths.landmarks) if cfg.paths.landmarks else cfg.data_path("landmarks.csv")


# ----------------------------------------------------------------------------
# partition


@dataclass
class PartitionResult:
    frame_ids: list[str]
    boxes: np.ndarray   # (N, R, 4)
    hits: int
    misses: int


def box_cache(cfg: RunConfig, table: AUPartitionTable) -> BoxCache:
    return BoxCache(cfg.paths.cache_dir, table, default_layout().digest)


def write_boxes_csv(path, frame_ids, boxes: np.ndarray, table: AUPartitionTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "group", "side", "y_min", "x_min", "y_max", "x_max"])
        for fid, bx in zip(frame_ids, boxes):
            for (gid, side), b in zip(table.box_slots, bx):
                w.writerow([fid, gid, side, *(repr(float(v)) for v in b)])


def run_partition(cfg: RunConfig, overlays: int = 0) -> PartitionResult:
    """Boxes for every landmark record, via the cache; writes ``boxes.csv``."""
    table = table_for(cfg)
    lms = read_landmark_file(_landmarks_path(cfg))
    cache = box_cache(cfg, table)
    out = _out(cfg)
    all_boxes = []
    for i, lm in enumerate(lms):
        entry = cache.get(lm)
        if entry is None:
            part = partition_face(lm, table)
            cache.put(lm, part.boxes)
            boxes = part.boxes
            if i < overlays:
                save_overlay(out / "overlays" / f"{lm.frame_id}.png", part)
        else:
            boxes = entry.boxes
        all_boxes.append([b.as_tuple() for b in boxes])
    arr = np.array(all_boxes, dtype=np.float64).reshape(len(lms), table.R, 4)
    write_boxes_csv(out / BOXES_FILE, [lm.frame_id for lm in lms], arr, table)
    log.info("partition: %d frames, %d cache hits, %d misses", len(lms), cache.hits, cache.misses)
    return PartitionResult([lm.frame_id for lm in lms], arr, cache.hits, cache.misses)


def save_overlay(path: Path, part) -> None:
    """Each group mask tinted in its own colour over a grey canvas."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    h, w = part.owner.shape
    img = np.full((h, w, 3), 0.5)
    colours = plt.get_cmap("tab10")
    for k, m in enumerate(part.masks):
        img[m.bitmap] = 0.5 * img[m.bitmap] + 0.5 * np.asarray(colours(k % 10)[:3])
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, img, metadata={"Software": None})


def cached_boxes(cfg: RunConfig, table: AUPartitionTable, lms: list[Landmarks68]) -> np.ndarray:
    """Boxes of every frame from the cache; raises ``CacheMissError`` on any gap."""
    cache = box_cache(cfg, table)
    rows = [[b.as_tuple() for b in cache.require(lm).boxes] for lm in lms]
    return np.array(rows, dtype=np.float64).reshape(len(lms), table.R, 4)


# ----------------------------------------------------------------------------
# synth


def synth_config(cfg: RunConfig) -> SynthConfig:
    s = cfg.synth
    return SynthConfig(n_frames=s.n_frames, n_subjects=s.n_subjects, size=cfg.resolution,
                       base_rate=s.base_rate, mean_duration=s.mean_duration,
                       duration_spread=s.duration_spread, base_rates=dict(s.base_rates),
                       amplitude=s.amplitude, noise=s.noise, frame_jitter=s.frame_jitter,
                       max_shift=s.max_shift, seed=cfg.seed)


def run_synth(cfg: RunConfig) -> SynthDataset:
    table = table_for(cfg)
    scfg = synth_config(cfg)
    ds = generate(scfg, table)
    save_dataset(ds, cfg.paths.data_dir, scfg)
    log.info("synth: %d frames of %dx%d written to %s", len(ds), scfg.size, scfg.size, cfg.paths.data_dir)
    return ds


# ----------------------------------------------------------------------------
# splits


def held_out_subjects(cfg: RunConfig, subjects: np.ndarray) -> set:
    if cfg.split.held_out_subjects is not None:
        return {int(s) for s in cfg.split.held_out_subjects}
    ids = sorted(set(int(s) for s in subjects))
    if cfg.split.folds == 1:
        return set()
    return {s for k, s in enumerate(ids) if k % cfg.split.folds == cfg.split.held_out_fold}


def split_mask(cfg: RunConfig, subjects: np.ndarray, which: str) -> np.ndarray:
    held = held_out_subjects(cfg, subjects)
    test = np.isin(subjects, sorted(held))
    if which == "train":
        return ~test
    if which == "test":
        return test
    if which == "all":
        return np.ones(len(subjects), dtype=bool)
    raise ValueError("split must be train, test or all")


# ----------------------------------------------------------------------------
# train / infer


def _mean_box_array(cfg: RunConfig, table: AUPartitionTable, train_boxes: np.ndarray) -> np.ndarray:
    path = Path(cfg.paths.out_dir) / MEAN_BOX_FILE
    if path.exists():
        mbt = mean_box_table_from_rows(read_mean_box_csv(path), table)
        return np.asarray(mbt.boxes, dtype=np.float64)
    return train_boxes.mean(axis=0)


def _model_config(cfg: RunConfig, table: AUPartitionTable) -> ModelConfig:
    return ModelConfig(table.L, BACKBONES[cfg.backbone], tuple(cfg.roi_size), cfg.fc_hidden)


def _train_config(cfg: RunConfig) -> TrainConfig:
    o = cfg.optimizer
    return TrainConfig(cfg.epochs, cfg.batch_size, o.base_lr, o.momentum, o.weight_decay,
                       o.lr_decay, o.lr_step, cfg.mirror, cfg.seed)


def _dynamic_config(cfg: RunConfig) -> dynamic.DynamicConfig:
    d = cfg.dynamic_opts
    o = cfg.optimizer
    return dynamic.DynamicConfig(d.skip, d.T, d.window_stride, None, d.kernel, cfg.fc_hidden, d.residual,
                                 d.cell_init_scale, d.epochs, d.batch_size, o.base_lr, o.momentum,
                                 o.weight_decay, o.lr_decay, o.lr_step, cfg.seed)


def _flow_fn(images: np.ndarray, subjects: np.ndarray, scale: float, length: int):
    flow = dynamic.difference_flow(images, subjects) * scale
    starts = {}
    for i, s in enumerate(subjects.tolist()):
        starts.setdefault(s, i)
    ends = {}
    for i, s in enumerate(subjects.tolist()):
        ends[s] = i

    def fn(idx):
        out = []
        for i in np.asarray(idx):
            s = int(subjects[i])
            seg = flow[starts[s]:ends[s] + 1]
            out.append(dynamic.flow_stack(seg, int(i) - starts[s], length))
        return np.stack(out)
    return fn


def roi_features(model: AURCNN, x: np.ndarray, boxes: np.ndarray, batch: int = 50) -> np.ndarray:
    """Pooled RoI features ``(N, R, C, Ho, Wo)`` of a trained static model."""
    out = []
    for s in range(0, len(x), batch):
        fm, _ = model.features(x[s:s + batch])
        p, _ = model.pool(fm, boxes[s:s + batch])
        out.append(p.reshape(-1, boxes.shape[1], *p.shape[1:]))
    return np.concatenate(out)


@dataclass
class Prepared:
    ds: SynthDataset
    table: AUPartitionTable
    boxes: np.ndarray
    x: np.ndarray
    scale: float
    mean_pixel: np.ndarray


def _prepare(cfg: RunConfig, table: AUPartitionTable, scale=None, mean_pixel=None,
             mean_boxes: np.ndarray | None = None) -> Prepared:
    ds = load_dataset(cfg.paths.data_dir, table.au_order)
    if ds.images.shape[2] != ds.images.shape[3] or ds.images.shape[2] != cfg.resolution:
        raise ShapeError(f"images are {ds.images.shape[2:]} but the config resolution is {cfg.resolution}")
    boxes = cached_boxes(cfg, table, ds.landmarks)
    if mean_boxes is not None:
        boxes = np.broadcast_to(mean_boxes, boxes.shape).copy()
    if scale is None:
        tr = split_mask(cfg, ds.subjects, "train")
        if cfg.input_scale == "auto":
            scale, mean_pixel = input_stats(ds.images[tr])
        else:
            scale = float(cfg.input_scale)
            mean_pixel = np.asarray(ds.images[tr], dtype=np.float64).mean(axis=(0, 2, 3)) * scale
    x = to_input(ds.images, scale, mean_pixel)
    return Prepared(ds, table, boxes, x, float(scale), np.asarray(mean_pixel, dtype=np.float64))


def run_train(cfg: RunConfig) -> dict:
    """Train on the configured training split; writes checkpoint and loss log."""
    table = table_for(cfg)
    prep = _prepare(cfg, table)
    tr = split_mask(cfg, prep.ds.subjects, "train")
    mean_boxes = None
    if cfg.mean_box:
        mean_boxes = _mean_box_array(cfg, table, prep.boxes[tr])
        prep.boxes = np.broadcast_to(mean_boxes, prep.boxes.shape).copy()
    mcfg = _model_config(cfg, table)
    model = AURCNN(mcfg, seed=cfg.seed)
    out = _out(cfg)
    losses: list[tuple[str, int, int, float]] = []
    flow_fn = None
    net = model
    if cfg.dynamic == "two_stream":
        net = dynamic.TwoStreamRCNN(model, 2 * cfg.dynamic_opts.flow_length, seed=cfg.seed + 1)
        ftr = _flow_fn(prep.ds.images[tr], prep.ds.subjects[tr], prep.scale, cfg.dynamic_opts.flow_length)
        flow_fn = ftr
    state, tlog = train(net, prep.x[tr], prep.boxes[tr], prep.ds.labels[tr], table, _train_config(cfg),
                        on_iteration=lambda e, i, l: losses.append(("static", e, i, l)), flow_fn=flow_fn)
    params: dict[str, Param] = dict(net.params) if cfg.dynamic == "two_stream" else dict(model.params)
    if cfg.dynamic == "convlstm":
        dcfg = _dynamic_config(cfg)
        feats = roi_features(model, prep.x[tr], prep.boxes[tr])
        rl = assign_roi_labels_batch(prep.ds.labels[tr], table)
        fc = {k: model.params[k].value for k in ("fc1.w", "fc1.b", "fc2.w", "fc2.b")}
        hp, dl = dynamic.train_convlstm(feats, rl, prep.ds.subjects[tr], table.L, dcfg, fc_init=fc)
        for e, l in enumerate(dl):
            losses.append(("convlstm", e, -1, l))
        params.update({f"dyn.{k}": v for k, v in hp.items()})
    meta = {"format": "aurk-model", "dataset": table.dataset, "table_digest": table.digest,
            "backbone": cfg.backbone, "roi_size": list(cfg.roi_size), "fc_hidden": cfg.fc_hidden,
            "dynamic": cfg.dynamic, "dynamic_opts": asdict(cfg.dynamic_opts), "au_order": list(table.au_order),
            "input_scale": prep.scale, "mean_pixel": prep.mean_pixel.tolist(), "resolution": cfg.resolution,
            "mean_boxes": None if mean_boxes is None else np.asarray(mean_boxes).tolist(), "seed": cfg.seed}
    save_checkpoint(out / CHECKPOINT_FILE, params, meta, state)
    with open(out / LOSS_LOG_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "iteration", "loss"])
        for stage, e, i, l in losses:
            w.writerow([stage, e, i, repr(float(l))])
    log.info("train: %d frames, %d epochs, final epoch loss %.4f", int(tr.sum()), cfg.epochs,
             tlog.epoch_loss[-1] if tlog.epoch_loss else float("nan"))
    return {"epoch_loss": tlog.epoch_loss, "iteration_loss": tlog.iteration_loss}


def load_model(cfg: RunConfig, table: AUPartitionTable, path: str | Path | None = None):
    path = Path(path) if path else Path(cfg.paths.out_dir) / CHECKPOINT_FILE
    params, meta, _ = load_checkpoint(path)
    if meta.get("format") != "aurk-model":
        raise VersionError(f"{path}: not a model checkpoint")
    if meta["table_digest"] != table.digest or meta["dataset"] != table.dataset:
        raise VersionError(f"{path}: trained for the {meta['dataset']!r} table "
                           f"{meta['table_digest'][:12]}, config uses {table.dataset!r} {table.digest[:12]}")
    if meta["backbone"] != cfg.backbone or list(meta["roi_size"]) != list(cfg.roi_size):
        raise VersionError(f"{path}: backbone/RoI size differ from the config")
    return params, meta


def run_infer(cfg: RunConfig, split: str = "all", checkpoint: str | Path | None = None) -> tuple[list[str], np.ndarray]:
    """Per-frame predictions (RoI rows binarized, then OR-merged) -> ``predictions.csv``."""
    table = table_for(cfg)
    params, meta = load_model(cfg, table, checkpoint)
    mb = None if meta.get("mean_boxes") is None else np.asarray(meta["mean_boxes"])
    prep = _prepare(cfg, table, meta["input_scale"], np.asarray(meta["mean_pixel"]), mb)
    mask = split_mask(cfg, prep.ds.subjects, split)
    mcfg = _model_config(cfg, table)
    mode = meta["dynamic"]
    if mode == "two_stream":
        static = AURCNN(mcfg, {k[4:]: v for k, v in params.items() if k.startswith("rgb.")})
        net = dynamic.TwoStreamRCNN(static, 2 * meta["dynamic_opts"]["flow_length"])
        for k, v in params.items():
            if k.startswith("flow."):
                net.flow.params[k[5:]] = v
        net.fuse_w, net.fuse_b = params["fuse.w"], params["fuse.b"]
        ffn = _flow_fn(prep.ds.images[mask], prep.ds.subjects[mask], prep.scale,
                       meta["dynamic_opts"]["flow_length"])
        logits = predict_logits(net, prep.x[mask], prep.boxes[mask], flow_fn=ffn)
    else:
        model = AURCNN(mcfg, {k: v for k, v in params.items() if not k.startswith("dyn.")})
        if mode == "convlstm":
            feats = roi_features(model, prep.x[mask], prep.boxes[mask])
            hp = {k[4:]: v for k, v in params.items() if k.startswith("dyn.")}
            dcfg = dynamic.DynamicConfig(**{**{k: v for k, v in meta["dynamic_opts"].items()
                                               if k in ("skip", "T", "window_stride", "kernel",
                                                        "residual", "cell_init_scale")}})
            logits = dynamic.convlstm_predict_logits(feats, prep.ds.subjects[mask], hp, dcfg)
        else:
            logits = predict_logits(model, prep.x[mask], prep.boxes[mask])
    preds = frame_predictions(logits, table)
    ids = [f for f, m in zip(prep.ds.frame_ids, mask) if m]
    write_label_file(_out(cfg) / PREDICTIONS_FILE, ids, preds, table.au_order)
    return ids, preds


# ----------------------------------------------------------------------------
# eval / stats / mean-box


def run_eval(cfg: RunConfig, predictions: str | Path | None = None, ground_truth: str | Path | None = None,
             method: str = "aurk"):
    table = table_for(cfg)
    pred_path = Path(predictions) if predictions else Path(cfg.paths.out_dir) / PREDICTIONS_FILE
    gt_path = Path(ground_truth) if ground_truth else cfg.data_path("labels.csv")
    pids, preds, paus = read_label_file(pred_path)
    gids, gts, gaus = read_label_file(gt_path)
    if paus != gaus:
        raise ShapeError(f"prediction AUs {paus} differ from ground-truth AUs {gaus}")
    gmap = {f: i for i, f in enumerate(gids)}
    missing = [f for f in pids if f not in gmap]
    if missing:
        raise ShapeError(f"frame {missing[0]!r} has a prediction but no ground truth")
    gsel = gts[[gmap[f] for f in pids]]
    cols = [paus.index(a) for a in table.eval_aus if a in paus]
    rep = f1_per_au(preds[:, cols], gsel[:, cols], [paus[c] for c in cols], pids)
    out = _out(cfg)
    write_f1_csv(out / "f1_report.csv", {method: rep})
    write_report_json(out / "f1_report.json", {method: rep})
    return rep


def run_stats(cfg: RunConfig):
    """Duration statistics from the labels and box-area statistics from the cache."""
    table = table_for(cfg)
    ds_ids, labels, aus = read_label_file(cfg.data_path("labels.csv"))
    subjects = None
    sp = cfg.data_path("subjects.csv")
    if sp.exists():
        with open(sp, newline="") as fh:
            m = {r[0]: int(r[1]) for r in list(csv.reader(fh))[1:] if r}
        subjects = np.array([m[f] for f in ds_ids])
    dstats = duration_stats(labels, aus, subjects)
    out = _out(cfg)
    write_rows_csv(out / "duration_stats.csv", dstats.rows())
    lms = read_landmark_file(_landmarks_path(cfg))
    boxes = cached_boxes(cfg, table, lms)
    per_frame = _box_objects(boxes, table)
    astats = area_stats(per_frame, lms[0].width, lms[0].height)
    write_rows_csv(out / "area_stats.csv", astats.rows())
    return dstats, astats


def _box_objects(boxes: np.ndarray, table: AUPartitionTable):
    from aurk.partition import AUBoundingBox

    return [[AUBoundingBox(g, *map(float, b), side=s) for (g, s), b in zip(table.box_slots, fb)]
            for fb in boxes]


def run_mean_box(cfg: RunConfig, split: str = "train") -> MeanBoxTable:
    table = table_for(cfg)
    lms = read_landmark_file(_landmarks_path(cfg))
    boxes = cached_boxes(cfg, table, lms)
    if split != "all" and cfg.data_path("subjects.csv").exists():
        ds_subjects = load_dataset(cfg.paths.data_dir, table.au_order).subjects
        boxes = boxes[split_mask(cfg, ds_subjects, split)]
    mbt = compute_mean_boxes(_box_objects(boxes, table), table.box_slots)
    write_mean_box_csv(_out(cfg) / MEAN_BOX_FILE, mbt, table)
    return mbt
