"""AU partition rule: groups, AU masks, bounding boxes, mean boxes, area statistics."""

from __future__ import annotations

import csv
import hashlib
import io
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from aurk.errors import EmptyDatasetError, EmptyMaskError, FormatError, MissingRegionError
from aurk.geometry.landmarks import Landmarks68
from aurk.geometry.layout import BasicRoI, derive_points, face_center_x, label_map, partition_basic_rois

PROFILES = ("bp4d", "disfa", "synthetic")


@dataclass(frozen=True)
class AUGroup:
    group_id: int
    aus: tuple[int, ...]
    rois: tuple[int, ...]
    fetched_by: tuple[int, ...] = ()
    symmetric: bool = False


@dataclass(frozen=True)
class AUPartitionTable:
    dataset: str
    groups: tuple[AUGroup, ...]
    au_order: tuple[int, ...]
    eval_aus: tuple[int, ...]
    digest: str = ""

    def __post_init__(self):
        ids = [g.group_id for g in self.groups]
        if len(set(ids)) != len(ids):
            raise FormatError("duplicate group ids")
        for g in self.groups:
            if any(not 1 <= r <= 43 for r in g.rois):
                raise FormatError(f"group {g.group_id}: RoI numbers must be in 1..43")
            if any(k not in ids for k in g.fetched_by):
                raise FormatError(f"group {g.group_id}: fetched_by references a missing group")
            unknown = set(g.aus) - set(self.au_order)
            if unknown:
                raise FormatError(f"group {g.group_id}: AUs {sorted(unknown)} not in au_order")
        if len(set(self.au_order)) != len(self.au_order):
            raise FormatError("au_order lists an AU twice")
        if set(self.eval_aus) - set(self.au_order):
            raise FormatError("eval_aus must be a subset of au_order")

    @property
    def L(self) -> int:
        return len(self.au_order)

    @property
    def R(self) -> int:
        return len(self.box_slots)

    @property
    def au_index(self) -> dict[int, int]:
        return {au: i for i, au in enumerate(self.au_order)}

    @property
    def group_ids(self) -> tuple[int, ...]:
        return tuple(g.group_id for g in self.groups)

    def group(self, group_id: int) -> AUGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(f"no AU group #{group_id} in the {self.dataset} table")

    def fetch_from(self, group_id: int) -> tuple[int, ...]:
        """Groups whose labels ``group_id`` fetches (inverse of ``fetched_by``)."""
        return tuple(g.group_id for g in self.groups if group_id in g.fetched_by)

    @property
    def box_slots(self) -> tuple[tuple[int, str], ...]:
        """One ``(group_id, side)`` per AU bounding box, in row order.

        ``side`` is ``"left"``/``"right"`` (image left/right) for symmetric
        groups and ``""`` otherwise.
        """
        slots = []
        for g in self.groups:
            if g.symmetric:
                slots += [(g.group_id, "left"), (g.group_id, "right")]
            else:
                slots.append((g.group_id, ""))
        return tuple(slots)

    @property
    def row_group(self) -> tuple[int, ...]:
        return tuple(gid for gid, _ in self.box_slots)


def parse_partition_table(text: str) -> AUPartitionTable:
    header: dict[str, str] = {}
    groups: list[dict] = []
    current: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[group\s+(\d+)\]", line)
        if m:
            current = {"group_id": int(m.group(1))}
            groups.append(current)
            continue
        if "=" not in line:
            raise FormatError(f"partition table line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        (header if current is None else current)[key] = value

    def ints(s: str, what: str) -> tuple[int, ...]:
        try:
            return tuple(int(t) for t in s.replace(",", " ").split())
        except ValueError:
            raise FormatError(f"partition table: {what} must be integers: {s!r}") from None

    if header.get("format") != "au_partition" or header.get("version") != "1":
        raise FormatError("partition table must declare 'format = au_partition' and 'version = 1'")
    built = []
    for g in groups:
        sym = g.get("symmetric", "no").lower()
        if sym not in ("yes", "no", "true", "false"):
            raise FormatError(f"group {g['group_id']}: symmetric must be yes/no")
        built.append(AUGroup(
            group_id=g["group_id"],
            aus=ints(g.get("aus", ""), "aus"),
            rois=ints(g.get("rois", ""), "rois"),
            fetched_by=ints(g.get("fetched_by", ""), "fetched_by"),
            symmetric=sym in ("yes", "true"),
        ))
    au_order = ints(header.get("au_order", ""), "au_order")
    eval_aus = ints(header.get("eval_aus", " ".join(map(str, au_order))), "eval_aus")
    digest = hashlib.sha256(text.encode()).hexdigest()
    return AUPartitionTable(header.get("dataset", "custom"), tuple(built), au_order, eval_aus, digest)


def format_partition_table(table: AUPartitionTable) -> str:
    lines = ["format = au_partition", "version = 1", f"dataset = {table.dataset}",
             "au_order = " + " ".join(map(str, table.au_order)),
             "eval_aus = " + " ".join(map(str, table.eval_aus))]
    for g in table.groups:
        lines += ["", f"[group {g.group_id}]", "aus = " + " ".join(map(str, g.aus)),
                  "rois = " + " ".join(map(str, g.rois))]
        if g.symmetric:
            lines.append("symmetric = yes")
        if g.fetched_by:
            lines.append("fetched_by = " + " ".join(map(str, g.fetched_by)))
    return "\n".join(lines) + "\n"


@lru_cache(maxsize=None)
def _bundled_table(profile: str) -> AUPartitionTable:
    text = resources.files("aurk.data").joinpath(f"partition.{profile}.v1").read_text()
    return parse_partition_table(text)


def load_partition_table(profile_or_path: str | Path) -> AUPartitionTable:
    """Load a bundled profile (``bp4d``, ``disfa``, ``synthetic``) or a table file."""
    if str(profile_or_path) in PROFILES:
        return _bundled_table(str(profile_or_path))
    return parse_partition_table(Path(profile_or_path).read_text())


# ----------------------------------------------------------------------------
# masks and boxes


@dataclass
class AUMask:
    group_id: int
    bitmap: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]


@dataclass(frozen=True)
class AUBoundingBox:
    group_id: int
    y_min: float
    x_min: float
    y_max: float
    x_max: float
    space: str = "image"
    side: str = ""

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.y_min, self.x_min, self.y_max, self.x_max)

    @property
    def area(self) -> float:
        return (self.y_max - self.y_min) * (self.x_max - self.x_min)


def compose_au_mask(group_id: int, basic_rois: Mapping[int, np.ndarray] | Sequence[BasicRoI],
                    table: AUPartitionTable, width: int | None = None,
                    height: int | None = None) -> AUMask:
    """Union of the basic-RoI bitmaps listed for ``group_id``.

    ``basic_rois`` maps roi_no to a bitmap, or is a list of ``BasicRoI``
    polygons (then ``width``/``height`` are required).

    Raises:
        MissingRegionError: a listed RoI is absent.
    """
    group = table.group(group_id)
    if not isinstance(basic_rois, Mapping):
        if width is None or height is None:
            raise ValueError("width and height are required when passing polygons")
        basic_rois = {r.roi_no: r.mask(width, height) for r in basic_rois if r.roi_no in group.rois}
    missing = [r for r in group.rois if r not in basic_rois]
    if missing:
        raise MissingRegionError(f"group #{group_id} needs basic RoIs {missing}")
    first = np.asarray(basic_rois[group.rois[0]], dtype=bool)
    out = np.zeros_like(first)
    for r in group.rois:
        out |= np.asarray(basic_rois[r], dtype=bool)
    return AUMask(group_id, out)


def masks_from_owner(owner: np.ndarray, table: AUPartitionTable) -> list[AUMask]:
    """All group masks from a pixel-ownership map (see ``label_map``)."""
    return [AUMask(g.group_id, np.isin(owner, g.rois)) for g in table.groups]


def _tight_box(bitmap: np.ndarray, group_id: int, side: str = "") -> AUBoundingBox:
    rows = np.flatnonzero(bitmap.any(axis=1))
    cols = np.flatnonzero(bitmap.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError(f"group #{group_id}{' ' + side if side else ''} mask is empty")
    return AUBoundingBox(group_id, float(rows[0]), float(cols[0]),
                         float(rows[-1] + 1), float(cols[-1] + 1), "image", side)


def mask_to_boxes(mask: AUMask, table: AUPartitionTable,
                  center_x: float | None = None) -> list[AUBoundingBox]:
    """Tight axis-aligned boxes around a group mask, in pixel-edge coordinates.

    A pixel ``(r, c)`` covers ``[r, r+1) x [c, c+1)``, so a mask filling rows
    10..29 and columns 20..39 gives ``(10, 20, 30, 40)``. Symmetric groups are
    split at ``center_x`` (pixels whose centre lies left of it go to the
    left box) and yield two boxes.

    Raises:
        EmptyMaskError: the mask, or one side of a symmetric mask, is empty.
    """
    group = table.group(mask.group_id)
    if not mask.bitmap.any():
        raise EmptyMaskError(f"group #{mask.group_id} mask is empty")
    if not group.symmetric:
        return [_tight_box(mask.bitmap, mask.group_id)]
    if center_x is None:
        center_x = mask.width / 2.0
    left_cols = (np.arange(mask.width) + 0.5) < center_x
    left = mask.bitmap & left_cols[None, :]
    right = mask.bitmap & ~left_cols[None, :]
    return [_tight_box(left, mask.group_id, "left"), _tight_box(right, mask.group_id, "right")]


@dataclass
class FacePartition:
    """Everything derived from one face: polygons, ownership, group masks, boxes."""

    landmarks: Landmarks68
    rois: list[BasicRoI]
    owner: np.ndarray
    masks: list[AUMask]
    boxes: list[AUBoundingBox]


def partition_face(lm: Landmarks68, table: AUPartitionTable, layout=None) -> FacePartition:
    dp = derive_points(lm, layout)
    rois = partition_basic_rois(lm, dp, layout)
    owner, _ = label_map(rois, lm.width, lm.height)
    masks = masks_from_owner(owner, table)
    cx = face_center_x(lm, dp)
    boxes: list[AUBoundingBox] = []
    for m in masks:
        boxes += mask_to_boxes(m, table, cx)
    return FacePartition(lm, rois, owner, masks, boxes)


def face_boxes(lm: Landmarks68, table: AUPartitionTable, layout=None) -> list[AUBoundingBox]:
    """The R AU bounding boxes of one face, in ``table.box_slots`` order."""
    return partition_face(lm, table, layout).boxes


def scale_box_to_feature(box: AUBoundingBox, stride: int) -> AUBoundingBox:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if box.space != "image":
        raise ValueError("box is already in feature space")
    s = float(stride)
    return replace(box, y_min=box.y_min / s, x_min=box.x_min / s, y_max=box.y_max / s,
                   x_max=box.x_max / s, space="feature")


# ----------------------------------------------------------------------------
# mean boxes


@dataclass
class MeanBoxTable:
    slots: tuple[tuple[int, str], ...]
    boxes: np.ndarray  # (R, 4) y_min, x_min, y_max, x_max
    n_frames: int = 0

    def to_boxes(self) -> list[AUBoundingBox]:
        return [AUBoundingBox(gid, *map(float, b), space="image", side=side)
                for (gid, side), b in zip(self.slots, self.boxes)]


@dataclass
class MeanBoxAccumulator:
    """Streaming per-slot coordinate sums; partial accumulators merge associatively."""

    slots: tuple[tuple[int, str], ...]
    sums: np.ndarray = field(default=None)
    n: int = 0

    def __post_init__(self):
        if self.sums is None:
            self.sums = np.zeros((len(self.slots), 4))

    def add(self, boxes: Sequence[AUBoundingBox]) -> None:
        if len(boxes) != len(self.slots):
            raise ValueError(f"frame has {len(boxes)} boxes, expected {len(self.slots)}")
        self.sums += np.array([b.as_tuple() for b in boxes])
        self.n += 1

    def merge(self, other: MeanBoxAccumulator) -> MeanBoxAccumulator:
        if other.slots != self.slots:
            raise ValueError("cannot merge accumulators over different slots")
        return MeanBoxAccumulator(self.slots, self.sums + other.sums, self.n + other.n)

    def result(self) -> MeanBoxTable:
        if self.n == 0:
            raise EmptyDatasetError("mean boxes need at least one frame")
        return MeanBoxTable(self.slots, self.sums / self.n, self.n)


def compute_mean_boxes(per_frame_boxes: Iterable[Sequence[AUBoundingBox]],
                       slots: Sequence[tuple[int, str]] | None = None) -> MeanBoxTable:
    """Average each box coordinate over frames.

    Raises:
        EmptyDatasetError: no frames.
    """
    acc = None
    for boxes in per_frame_boxes:
        if acc is None:
            acc = MeanBoxAccumulator(tuple(slots) if slots is not None
                                     else tuple((b.group_id, b.side) for b in boxes))
        acc.add(boxes)
    if acc is None:
        raise EmptyDatasetError("mean boxes need at least one frame")
    return acc.result()


MEAN_BOX_HEADER = ["AU group", "AU index", "Mean boxes coordinates (y_min x_min y_max x_max)"]


def _fmt(v: float) -> str:
    return repr(float(v))


def format_box_tuple(box: Sequence[float]) -> str:
    return "(" + ", ".join(_fmt(v) for v in box) + ")"


def parse_box_tuples(text: str) -> list[tuple[float, ...]]:
    """Parse ``"(a, b, c, d), (e, f, g, h)"`` into coordinate tuples."""
    found = re.findall(r"\(([^()]*)\)", text)
    if not found or re.sub(r"\([^()]*\)|[\s,]", "", text):
        raise FormatError(f"bad box list {text!r}")
    out = []
    for body in found:
        parts = [p.strip() for p in body.split(",")]
        if len(parts) != 4:
            raise FormatError(f"box needs 4 coordinates: ({body})")
        try:
            out.append(tuple(float(p) for p in parts))
        except ValueError:
            raise FormatError(f"non-numeric box coordinate in ({body})") from None
    return out


def mean_box_rows(mbt: MeanBoxTable, table: AUPartitionTable) -> list[list[str]]:
    rows = []
    for g in table.groups:
        idx = [i for i, (gid, _) in enumerate(mbt.slots) if gid == g.group_id]
        if not idx:
            continue
        aus = [a for a in g.aus if a in table.eval_aus] or list(g.aus)
        rows.append([f"# {g.group_id}", ",".join(map(str, aus)),
                     ", ".join(format_box_tuple(mbt.boxes[i]) for i in idx)])
    return rows


def write_mean_box_csv(path_or_buf, mbt: MeanBoxTable, table: AUPartitionTable) -> None:
    rows = [MEAN_BOX_HEADER] + mean_box_rows(mbt, table)
    if hasattr(path_or_buf, "write"):
        csv.writer(path_or_buf, lineterminator="\n").writerows(rows)
        return
    with open(path_or_buf, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


@dataclass
class MeanBoxRow:
    group_id: int
    aus: tuple[int, ...]
    boxes: list[tuple[float, ...]]
    box_text: str


def read_mean_box_csv(path_or_text: str | Path) -> list[MeanBoxRow]:
    """Parse a mean-box table (our output or a published fixture)."""
    p = Path(path_or_text) if not str(path_or_text).lstrip().startswith("AU group") else None
    text = p.read_text() if p is not None else str(path_or_text)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]][:2] != MEAN_BOX_HEADER[:2]:
        raise FormatError("mean-box CSV must start with the 'AU group,AU index,...' header")
    out = []
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"mean-box row needs 3 columns: {row}")
        m = re.fullmatch(r"#\s*(\d+)", row[0].strip())
        if not m:
            raise FormatError(f"bad AU group cell {row[0]!r}")
        aus = tuple(int(a) for a in row[1].replace(" ", "").split(",") if a)
        out.append(MeanBoxRow(int(m.group(1)), aus, parse_box_tuples(row[2]), row[2]))
    return out


def published_mean_boxes(profile: str) -> list[MeanBoxRow]:
    name = {"bp4d": "mean_box.bp4d.table8.csv", "disfa": "mean_box.disfa.table9.csv"}[profile]
    return read_mean_box_csv(resources.files("aurk.data").joinpath(name).read_text())


def mean_box_table_from_rows(rows: Sequence[MeanBoxRow], table: AUPartitionTable) -> MeanBoxTable:
    """Rebuild a MeanBoxTable (all slots of ``table``) from parsed CSV rows."""
    by_group = {r.group_id: r.boxes for r in rows}
    boxes = []
    for gid, side in table.box_slots:
        if gid not in by_group:
            raise FormatError(f"mean-box file has no row for group #{gid}")
        gboxes = by_group[gid]
        boxes.append(gboxes[1] if side == "right" else gboxes[0])
    return MeanBoxTable(table.box_slots, np.array(boxes, dtype=np.float64))


# ----------------------------------------------------------------------------
# area statistics


@dataclass
class AreaStats:
    group_ids: tuple[int, ...]
    avg_area: np.ndarray
    proportion: np.ndarray  # fraction of image area, full precision
    n_frames: int

    def percent_rounded(self) -> list[float]:
        return [round(100.0 * p, 1) for p in self.proportion]

    def rows(self) -> list[list[str]]:
        rows = [["AU group"] + [f"# {g}" for g in self.group_ids],
                ["Avg box area (pixels)"] + [f"{a:.0f}" for a in self.avg_area],
                ["Area proportion"] + [f"{p:.1f}%" for p in self.percent_rounded()]]
        return rows


def area_stats(per_frame_boxes: Iterable[Sequence[AUBoundingBox]], width: int,
               height: int) -> AreaStats:
    """Average box area per AU group (both boxes of a symmetric group pooled)."""
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    n = 0
    for boxes in per_frame_boxes:
        n += 1
        for b in boxes:
            sums[b.group_id] = sums.get(b.group_id, 0.0) + b.area
            counts[b.group_id] = counts.get(b.group_id, 0) + 1
    if n == 0:
        raise EmptyDatasetError("area statistics need at least one frame")
    gids = tuple(sorted(sums))
    avg = np.array([sums[g] / counts[g] for g in gids])
    return AreaStats(gids, avg, avg / float(width * height), n)
