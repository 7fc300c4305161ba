"""Landmark records: parsing, validation and clamping.

One record per frame in CSV form::

    frame_id,x0,y0,x1,y1,...,x67,y67,width,height

Indices follow the 68-point iBUG/dlib convention, zero based.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from aurk.errors import FormatError

N_LANDMARKS = 68

# landmark index -> index of its left/right mirror partner
MIRROR_INDEX: tuple[int, ...] = tuple(
    [16 - i for i in range(17)]                      # jaw
    + [26 - (i - 17) for i in range(17, 27)]         # brows
    + [27, 28, 29, 30]                               # nose bridge
    + [35, 34, 33, 32, 31]                           # nostrils
    + [45, 44, 43, 42, 47, 46]                       # eye on image left
    + [39, 38, 37, 36, 41, 40]                       # eye on image right
    + [54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55]
    + [64, 63, 62, 61, 60, 67, 66, 65]
)


@dataclass
class Landmarks68:
    points: np.ndarray  # (68, 2) float64, columns x, y
    width: int
    height: int
    frame_id: str = ""
    clamp_count: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise FormatError(f"expected {N_LANDMARKS} points, got array of shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise FormatError(f"frame {self.frame_id!r}: non-finite landmark coordinate")
        self.points = pts

    def __getitem__(self, idx: int) -> np.ndarray:
        return self.points[idx]

    def translated(self, dx: float, dy: float) -> Landmarks68:
        return Landmarks68(self.points + np.array([dx, dy]), self.width, self.height,
                           self.frame_id, self.clamp_count)

    def to_record(self) -> list[str]:
        flat = [repr(float(v)) for v in self.points.reshape(-1)]
        return [self.frame_id, *flat, str(self.width), str(self.height)]


def clamp_landmarks(points: np.ndarray, width: int, height: int) -> tuple[np.ndarray, int]:
    """Clamp points into ``[0, width-1] x [0, height-1]``; return points and the clamp count."""
    pts = np.asarray(points, dtype=np.float64)
    lo = np.zeros(2)
    hi = np.array([width - 1, height - 1], dtype=np.float64)
    clamped = np.clip(pts, lo, hi)
    moved = np.any(clamped != pts, axis=1)
    return clamped, int(moved.sum())


def _to_float(token: str, what: str, frame_id: str) -> float:
    try:
        value = float(token)
    except (TypeError, ValueError):
        raise FormatError(f"frame {frame_id!r}: non-numeric {what}: {token!r}") from None
    if not math.isfinite(value):
        raise FormatError(f"frame {frame_id!r}: non-finite {what}: {token!r}")
    return value


def parse_landmarks(record: str | Sequence[str]) -> Landmarks68:
    """Parse one landmark record (a CSV line or a list of fields).

    Coordinates outside the image are clamped; ``clamp_count`` reports how many
    points were moved.

    Raises:
        FormatError: wrong field count, non-numeric or non-finite field.
    """
    if isinstance(record, str):
        fields = next(csv.reader([record.strip()]))
    else:
        fields = list(record)
    if not fields:
        raise FormatError("empty landmark record")
    frame_id = str(fields[0]).strip()
    values = fields[1:]
    expected = 2 * N_LANDMARKS + 2
    if len(values) != expected:
        n_pairs = (len(values) - 2) / 2
        raise FormatError(
            f"frame {frame_id!r}: expected {N_LANDMARKS} coordinate pairs plus width,height "
            f"({expected} numbers), got {len(values)} numbers (~{n_pairs:g} pairs)"
        )
    width_f = _to_float(values[-2], "width", frame_id)
    height_f = _to_float(values[-1], "height", frame_id)
    if width_f != int(width_f) or height_f != int(height_f) or width_f < 1 or height_f < 1:
        raise FormatError(f"frame {frame_id!r}: image dimensions must be positive integers")
    coords = np.array([_to_float(v, "coordinate", frame_id) for v in values[:-2]])
    pts, n_clamped = clamp_landmarks(coords.reshape(N_LANDMARKS, 2), int(width_f), int(height_f))
    return Landmarks68(pts, int(width_f), int(height_f), frame_id, n_clamped)


def landmark_header() -> list[str]:
    cols = ["frame_id"]
    for i in range(N_LANDMARKS):
        cols += [f"x{i}", f"y{i}"]
    return cols + ["width", "height"]


def read_landmark_file(path: str | Path) -> list[Landmarks68]:
    """Read every record of a landmark CSV file; a header row is optional."""
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0].strip() == "frame_id"):
                continue
            try:
                out.append(parse_landmarks(row))
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_landmark_file(path: str | Path, records: Iterable[Landmarks68]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(landmark_header())
        for lm in records:
            w.writerow(lm.to_record())


def mirror_landmarks(lm: Landmarks68) -> Landmarks68:
    """Horizontally flip a face: x -> width - 1 - x with semantic index swap."""
    pts = lm.points.copy()
    pts[:, 0] = (lm.width - 1) - pts[:, 0]
    pts = pts[list(MIRROR_INDEX)]
    return Landmarks68(pts, lm.width, lm.height, lm.frame_id, lm.clamp_count)


def template_points() -> np.ndarray:
    """The bundled frontal template face, on a 512x512 crop."""
    from importlib import resources

    text = resources.files("aurk.data").joinpath("template_face.v1.csv").read_text()
    rows = [ln.split(",") for ln in text.splitlines() if ln and not ln.startswith("#")]
    pts = np.array([[float(r[1]), float(r[2])] for r in rows])
    if pts.shape != (N_LANDMARKS, 2):
        raise FormatError("template face must list 68 points")
    return pts


def template_landmarks(width: int = 512, height: int = 512) -> Landmarks68:
    pts = template_points() * np.array([width / 512.0, height / 512.0])
    return Landmarks68(pts, width, height, "template")
