"""Synthetic AU video generator.

Each subject gets a base face; every frame perturbs it slightly. Active AUs
paint an AU-specific colored grating inside their group's mask, on top of a
flat face, a background gradient and pixel noise. Labels come from
alternating off/on runs whose on-durations are drawn in antithetic pairs
around the configured mean, so the realised mean duration stays close to
the planted one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aurk.errors import DegenerateRegionError, FormatError, ShapeError
from aurk.geometry.faces import random_face
from aurk.geometry.landmarks import Landmarks68, read_landmark_file, write_landmark_file
from aurk.labels import read_label_file, write_label_file
from aurk.partition import AUPartitionTable, FacePartition, partition_face

# (RGB direction, grating angle in degrees, period in pixels) per AU slot
_PATTERNS = (
    ((1.0, -0.4, -0.4), 0.0, 4.0),
    ((-0.4, 1.0, -0.4), 90.0, 4.0),
    ((-0.4, -0.4, 1.0), 45.0, 5.0),
    ((1.0, 0.6, -0.8), 90.0, 6.0),
    ((-0.8, 1.0, 0.6), 0.0, 6.0),
    ((0.6, -0.8, 1.0), 135.0, 5.0),
    ((1.0, 1.0, -1.0), 30.0, 8.0),
    ((-1.0, 1.0, 1.0), 120.0, 8.0),
)


@dataclass
class SynthConfig:
    n_frames: int = 600
    n_subjects: int = 6
    size: int = 128
    base_rate: float = 0.35
    mean_duration: float = 8.0
    duration_spread: float = 0.5   # durations span mean * (1 +/- spread)
    base_rates: dict = field(default_factory=dict)   # AU number -> rate override
    amplitude: float = 60.0        # grating amplitude, grey levels
    noise: float = 6.0             # pixel noise std, grey levels
    frame_jitter: float = 1.5      # landmark jitter per frame, pixels at 512 px
    max_shift: float = 3.0         # per-frame translation, pixels
    seed: int = 0

    def rate_for(self, au: int) -> float:
        return float(self.base_rates.get(au, self.base_rates.get(str(au), self.base_rate)))


@dataclass
class SynthDataset:
    frame_ids: list[str]
    subjects: np.ndarray      # (N,) int
    images: np.ndarray        # (N, 3, H, W) uint8
    landmarks: list[Landmarks68]
    labels: np.ndarray        # (N, L) uint8
    au_order: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.frame_ids)

    def subset(self, idx) -> SynthDataset:
        idx = np.asarray(idx, dtype=np.int64)
        return SynthDataset([self.frame_ids[i] for i in idx], self.subjects[idx], self.images[idx],
                            [self.landmarks[i] for i in idx], self.labels[idx], self.au_order)


def segment_timeline(rng: np.random.Generator, n: int, rate: float, mean_duration: float,
                     spread: float = 0.5) -> np.ndarray:
    """Binary timeline of length ``n`` made of complete on-runs.

    Runs never touch the end of the sequence, so every run is observed at
    its full drawn length, and on-durations come in antithetic pairs that
    are either both kept or both dropped. Rate 0 yields all zeros.
    """
    out = np.zeros(n, dtype=np.uint8)
    if rate <= 0.0 or n == 0:
        return out
    if rate >= 1.0:
        out[:] = 1
        return out
    d = max(1.0, float(mean_duration))
    gap = d * (1.0 - rate) / rate
    half = d * spread
    t = int(rng.integers(0, int(gap) + 1))
    while True:
        u = rng.uniform(0.0, half)
        placed = []
        for dur in (max(1, int(round(d + u))), max(1, int(round(d - u)))):
            if t + dur > n:
                break
            placed.append((t, t + dur))
            t += dur + max(1, int(round(rng.uniform(0.5 * gap, 1.5 * gap))))
        if len(placed) < 2:
            # a pair that does not fit whole is dropped whole
            break
        for a, b in placed:
            out[a:b] = 1
    return out


def au_pattern(slot: int, height: int, width: int) -> np.ndarray:
    """``(3, H, W)`` zero-mean grating for the AU at ``slot`` in ``au_order``."""
    color, angle, period = _PATTERNS[slot % len(_PATTERNS)]
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    a = np.deg2rad(angle)
    wave = np.sin(2.0 * np.pi * (xx * np.cos(a) + yy * np.sin(a)) / period)
    return np.asarray(color)[:, None, None] * wave[None]


def texture_layer(part: FacePartition, active_aus, table: AUPartitionTable,
                  amplitude: float, patterns: dict[int, np.ndarray] | None = None) -> np.ndarray:
    """Sum of the gratings of ``active_aus``, each confined to its group mask."""
    h, w = part.owner.shape
    out = np.zeros((3, h, w))
    masks = {m.group_id: m.bitmap for m in part.masks}
    for au in active_aus:
        slot = table.au_order.index(au)
        gid = next(g.group_id for g in table.groups if au in g.aus)
        pat = patterns[au] if patterns is not None else au_pattern(slot, h, w)
        out += amplitude * pat * masks[gid][None]
    return out


def base_layer(part: FacePartition, rng: np.random.Generator, noise: float) -> np.ndarray:
    h, w = part.owner.shape
    yy, xx = np.mgrid[0:h, 0:w] / float(max(h, w))
    bg = np.stack([60 + 40 * xx, 70 + 30 * yy, 90 + 20 * (xx + yy)])
    face = (part.owner > 0)[None]
    skin = np.array([170.0, 130.0, 110.0])[:, None, None]
    img = np.where(face, skin, bg)
    return img + rng.normal(0.0, noise, size=img.shape)


def _frame_face(rng: np.random.Generator, base: np.ndarray, cfg: SynthConfig,
                table: AUPartitionTable, frame_id: str) -> tuple[Landmarks68, FacePartition]:
    s = cfg.size / 512.0
    for _ in range(50):
        pts = base + rng.normal(0.0, cfg.frame_jitter * s, size=base.shape)
        pts = pts + rng.uniform(-cfg.max_shift, cfg.max_shift, size=2)
        pts = np.clip(pts, 0.0, cfg.size - 1.0)
        lm = Landmarks68(pts, cfg.size, cfg.size, frame_id)
        try:
            return lm, partition_face(lm, table)
        except DegenerateRegionError:
            continue
    raise RuntimeError("could not draw a valid face; lower frame_jitter")


def generate(cfg: SynthConfig, table: AUPartitionTable) -> SynthDataset:
    """Deterministic in ``cfg`` (including ``cfg.seed``)."""
    if cfg.n_subjects < 1 or cfg.n_frames < cfg.n_subjects:
        raise ValueError("need at least one frame per subject")
    rng = np.random.default_rng(cfg.seed)
    L = table.L
    patterns = {au: au_pattern(i, cfg.size, cfg.size) for i, au in enumerate(table.au_order)}
    per = np.full(cfg.n_subjects, cfg.n_frames // cfg.n_subjects)
    per[: cfg.n_frames % cfg.n_subjects] += 1
    ids, subj, imgs, lms, labs = [], [], [], [], []
    for s in range(cfg.n_subjects):
        n = int(per[s])
        base = random_face(rng, cfg.size, cfg.size).points
        tl = np.stack([segment_timeline(rng, n, cfg.rate_for(au), cfg.mean_duration, cfg.duration_spread)
                       for au in table.au_order], axis=1) if L else np.zeros((n, 0), np.uint8)
        for t in range(n):
            fid = f"s{s:02d}_f{t:04d}"
            lm, part = _frame_face(rng, base, cfg, table, fid)
            active = [au for au, on in zip(table.au_order, tl[t]) if on]
            img = base_layer(part, rng, cfg.noise) + texture_layer(part, active, table, cfg.amplitude, patterns)
            ids.append(fid)
            subj.append(s)
            imgs.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
            lms.append(lm)
            labs.append(tl[t])
    return SynthDataset(ids, np.array(subj, dtype=np.int64), np.stack(imgs), lms,
                        np.array(labs, dtype=np.uint8).reshape(len(ids), L), tuple(table.au_order))


# ----------------------------------------------------------------------------
# on-disk layout: images.npy, landmarks.csv, labels.csv, subjects.csv, synth.json

def save_dataset(ds: SynthDataset, out_dir: str | Path, cfg: SynthConfig | None = None) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "images.npy", ds.images, allow_pickle=False)
    write_landmark_file(d / "landmarks.csv", ds.landmarks)
    write_label_file(d / "labels.csv", ds.frame_ids, ds.labels, ds.au_order)
    with open(d / "subjects.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "subject"])
        for fid, s in zip(ds.frame_ids, ds.subjects):
            w.writerow([fid, int(s)])
    if cfg is not None:
        (d / "synth.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")


def load_dataset(data_dir: str | Path, au_order=None) -> SynthDataset:
    """Load a dataset directory; ``subjects.csv`` is optional (one subject)."""
    d = Path(data_dir)
    lms = read_landmark_file(d / "landmarks.csv")
    ids, labels, aus = read_label_file(d / "labels.csv", au_order)
    if [lm.frame_id for lm in lms] != ids:
        raise ShapeError(f"{d}: landmark and label files list different frames")
    images = np.load(d / "images.npy", allow_pickle=False)
    if images.ndim != 4 or len(images) != len(ids):
        raise ShapeError(f"{d}: images.npy holds {images.shape}, expected {len(ids)} frames")
    subjects = np.zeros(len(ids), dtype=np.int64)
    sp = d / "subjects.csv"
    if sp.exists():
        with open(sp, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        m = {r[0]: int(r[1]) for r in rows if r}
        try:
            subjects = np.array([m[f] for f in ids], dtype=np.int64)
        except KeyError as e:
            raise FormatError(f"{sp}: no subject for frame {e.args[0]}") from None
    return SynthDataset(ids, subjects, images, lms, labels, aus)
