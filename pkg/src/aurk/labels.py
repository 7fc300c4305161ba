"""RoI-level label algebra: space constraint, label fetch, binarization, OR-merge."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from aurk.errors import FormatError, NumericError, ShapeError
from aurk.partition import AUPartitionTable


def effective_aus(table: AUPartitionTable, transitive: bool = False) -> dict[int, frozenset[int]]:
    """AUs whose labels each group's rows may carry.

    A group's own AUs plus the own AUs of every group it fetches from. With
    ``transitive`` the fetch relation is followed through chains (a group
    also inherits what its sources fetch).
    """
    own = {g.group_id: set(g.aus) for g in table.groups}
    out = {}
    for g in table.groups:
        aus = set(own[g.group_id])
        seen = {g.group_id}
        frontier = list(table.fetch_from(g.group_id))
        while frontier:
            src = frontier.pop()
            if src in seen:
                continue
            seen.add(src)
            aus |= own[src]
            if transitive:
                frontier.extend(table.fetch_from(src))
        out[g.group_id] = frozenset(aus)
    return out


def support_mask(table: AUPartitionTable, transitive: bool = False) -> np.ndarray:
    """Boolean ``(R, L)``: True where a row may be active under the space constraint."""
    eff = effective_aus(table, transitive)
    idx = table.au_index
    mask = np.zeros((table.R, table.L), dtype=bool)
    for r, gid in enumerate(table.row_group):
        for au in eff[gid]:
            mask[r, idx[au]] = True
    return mask


@dataclass
class LabelMatrix:
    bits: np.ndarray  # (R, L) uint8
    row_group: tuple[int, ...]

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 2 or self.bits.shape[0] != len(self.row_group):
            raise ShapeError(f"bits shape {self.bits.shape} does not match {len(self.row_group)} rows")

    @property
    def R(self) -> int:
        return self.bits.shape[0]

    @property
    def L(self) -> int:
        return self.bits.shape[1]


def _image_bits(img, L: int) -> np.ndarray:
    bits = np.asarray(img)
    if bits.shape[-1] != L:
        raise ShapeError(f"label vector has length {bits.shape[-1]}, table expects L={L}")
    if not np.all((bits == 0) | (bits == 1)):
        raise ShapeError("labels must be 0/1")
    return bits.astype(np.uint8)


def assign_roi_labels(img, table: AUPartitionTable, transitive: bool = False) -> LabelMatrix:
    """Spread an image-level label vector onto the R box rows.

    Row ``i`` keeps AU ``j`` iff ``j`` is in the effective AU set of the
    row's group. Both boxes of a symmetric group get the same row.

    Raises:
        ShapeError: ``len(img) != table.L``.
    """
    bits = _image_bits(img, table.L)
    if bits.ndim != 1:
        raise ShapeError("assign_roi_labels takes one image label vector")
    sup = support_mask(table, transitive)
    return LabelMatrix(sup * bits[None, :], table.row_group)


def assign_roi_labels_batch(imgs, table: AUPartitionTable, transitive: bool = False) -> np.ndarray:
    """Vectorised ``assign_roi_labels`` for ``(N, L)`` labels -> ``(N, R, L)``."""
    bits = _image_bits(imgs, table.L)
    return (support_mask(table, transitive)[None] * bits[:, None, :]).astype(np.uint8)


def apply_space_constraint(bits: np.ndarray, table: AUPartitionTable, transitive: bool = False) -> np.ndarray:
    """Zero every entry outside the row's effective AU set."""
    return (np.asarray(bits) * support_mask(table, transitive)).astype(np.uint8)


def binarize_logits(logits, table: AUPartitionTable, transitive: bool = False) -> LabelMatrix:
    """Threshold at zero (strictly greater -> 1) and re-apply the space constraint.

    Raises:
        NumericError: NaN in ``logits``.
        ShapeError: logits are not ``(R, L)``.
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.shape != (table.R, table.L):
        raise ShapeError(f"logits shape {x.shape}, expected {(table.R, table.L)}")
    if np.isnan(x).any():
        raise NumericError("NaN logit")
    return LabelMatrix(apply_space_constraint(x > 0.0, table, transitive), table.row_group)


def merge_roi_predictions(m: LabelMatrix | np.ndarray) -> np.ndarray:
    """Bit-wise OR over rows: ``(R, L) -> (L,)``; also accepts ``(N, R, L)``."""
    bits = m.bits if isinstance(m, LabelMatrix) else np.asarray(m)
    return np.any(bits.astype(bool), axis=-2).astype(np.uint8)


# ----------------------------------------------------------------------------
# label files: frame_id,au_<n>,... with the dataset's AU numbers as header


def label_header(au_order: Sequence[int]) -> list[str]:
    return ["frame_id"] + [f"au_{a}" for a in au_order]


def write_label_file(path: str | Path, frame_ids: Sequence[str], labels: np.ndarray,
                     au_order: Sequence[int]) -> None:
    labels = np.asarray(labels)
    if labels.shape != (len(frame_ids), len(au_order)):
        raise ShapeError(f"labels {labels.shape} vs {len(frame_ids)} frames x {len(au_order)} AUs")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(label_header(au_order))
        for fid, row in zip(frame_ids, labels):
            w.writerow([fid, *(str(int(v)) for v in row)])


def read_label_file(path: str | Path, au_order: Sequence[int] | None = None
                    ) -> tuple[list[str], np.ndarray, tuple[int, ...]]:
    """Read a label CSV. If ``au_order`` is given the columns are checked against it."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "frame_id":
        raise FormatError(f"{path}: missing 'frame_id,au_...' header")
    try:
        aus = tuple(int(c.strip().removeprefix("au_")) for c in rows[0][1:])
    except ValueError:
        raise FormatError(f"{path}: header columns must be au_<number>") from None
    if au_order is not None and tuple(au_order) != aus:
        raise FormatError(f"{path}: AU columns {aus} do not match the profile {tuple(au_order)}")
    ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(aus) + 1:
            raise FormatError(f"{path}:{lineno}: expected {len(aus) + 1} fields")
        try:
            vals = [int(v) for v in row[1:]]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer label") from None
        if any(v not in (0, 1) for v in vals):
            raise FormatError(f"{path}:{lineno}: labels must be 0/1")
        ids.append(row[0])
        data.append(vals)
    return ids, np.array(data, dtype=np.uint8).reshape(len(ids), len(aus)), aus

