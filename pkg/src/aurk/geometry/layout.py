"""The 43-region planar face partition.

The layout chart (``data/roi_layout.v1``) is the single source of truth: a
list of derived points (affine combinations of landmarks, or projections onto
the image border) followed by one vertex list per basic RoI. Polygons share
edges exactly, so on a valid face the 43 regions tile the image rectangle.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from aurk.errors import DegenerateRegionError, FormatError
from aurk.geometry.landmarks import Landmarks68
from aurk.geometry.raster import is_simple, polygon_area, rasterize

N_BASIC_ROIS = 43
CORNERS = ("TL", "TR", "BR", "BL")

_EXPR = re.compile(r"^(\w+)\((.*)\)$")
_ARITY = {"mid": 2, "lerp": 3, "offset": 4, "top": 1, "bottom": 1, "left": 1, "right": 1}


@dataclass(frozen=True)
class PointDef:
    name: str
    op: str
    args: tuple[str, ...]
    weight: float | None = None


@dataclass(frozen=True)
class RoiLayout:
    version: int
    points: tuple[PointDef, ...]
    rois: dict  # roi_no -> tuple of vertex tokens
    digest: str

    def vertex_kind(self, token: str) -> str:
        if token in CORNERS:
            return "corner"
        if re.fullmatch(r"L\d+", token):
            return "landmark"
        op = self._ops[token]
        return "border" if op in ("top", "bottom", "left", "right") else "derived"

    @property
    def _ops(self) -> dict:
        return {p.name: p.op for p in self.points}


@dataclass
class DerivedPoints:
    points: dict  # name -> np.ndarray (2,)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.points[name]


@dataclass
class BasicRoI:
    roi_no: int
    polygon: np.ndarray  # (n, 2) x, y
    tokens: tuple[str, ...] = ()

    def mask(self, width: int, height: int) -> np.ndarray:
        return rasterize(self.polygon, width, height)

    @property
    def area(self) -> float:
        return abs(polygon_area(self.polygon))


def _parse_token(tok: str, known: set[str], where: str) -> str:
    if tok in CORNERS or tok in known:
        return tok
    m = re.fullmatch(r"L(\d+)", tok)
    if m and 0 <= int(m.group(1)) < 68:
        return tok
    raise FormatError(f"{where}: unknown vertex token {tok!r}")


def parse_layout(text: str) -> RoiLayout:
    """Parse a layout chart. See ``FORMATS.md`` for the grammar."""
    header: dict[str, str] = {}
    points: list[PointDef] = []
    rois: dict[int, tuple[str, ...]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"layout line {lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("points", "rois"):
                raise FormatError(f"{where}: unknown section {section!r}")
            continue
        if "=" not in line:
            raise FormatError(f"{where}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            header[key] = value
        elif section == "points":
            m = _EXPR.match(value)
            if not m or m.group(1) not in _ARITY:
                raise FormatError(f"{where}: bad point expression {value!r}")
            op = m.group(1)
            args = tuple(a.strip() for a in m.group(2).split(","))
            if len(args) != _ARITY[op]:
                raise FormatError(f"{where}: {op} takes {_ARITY[op]} arguments")
            known = {p.name for p in points}
            weight = None
            if op in ("lerp", "offset"):
                try:
                    weight = float(args[-1])
                except ValueError:
                    raise FormatError(f"{where}: weight must be numeric") from None
                args = args[:-1]
            args = tuple(_parse_token(a, known, where) for a in args)
            if key in known or key in CORNERS or re.fullmatch(r"L\d+", key):
                raise FormatError(f"{where}: point name {key!r} is reserved or duplicated")
            points.append(PointDef(key, op, args, weight))
        else:
            try:
                roi_no = int(key)
            except ValueError:
                raise FormatError(f"{where}: RoI number must be an integer") from None
            if roi_no in rois:
                raise FormatError(f"{where}: RoI {roi_no} defined twice")
            known = {p.name for p in points}
            toks = tuple(_parse_token(t, known, where) for t in value.split())
            if len(toks) < 3:
                raise FormatError(f"{where}: RoI {roi_no} needs at least 3 vertices")
            rois[roi_no] = toks
    if header.get("format") != "roi_layout":
        raise FormatError("layout chart must declare 'format = roi_layout'")
    version = int(header.get("version", "0"))
    if version != 1:
        raise FormatError(f"unsupported layout version {version}")
    if sorted(rois) != list(range(1, N_BASIC_ROIS + 1)):
        raise FormatError(f"layout must define RoIs 1..{N_BASIC_ROIS} exactly once")
    digest = hashlib.sha256(text.encode()).hexdigest()
    return RoiLayout(version, tuple(points), rois, digest)


@lru_cache(maxsize=None)
def default_layout() -> RoiLayout:
    text = resources.files("aurk.data").joinpath("roi_layout.v1").read_text()
    return parse_layout(text)


def load_layout(path: str | Path | None = None) -> RoiLayout:
    if path is None:
        return default_layout()
    return parse_layout(Path(path).read_text())


def derive_points(lm: Landmarks68, layout: RoiLayout | None = None) -> DerivedPoints:
    """Evaluate every derived point of the layout for one face.

    Affine points are clamped to the closed image rectangle; border
    projections lie on it by construction.
    """
    layout = layout or default_layout()
    w, h = float(lm.width), float(lm.height)
    out: dict[str, np.ndarray] = {}

    def get(tok: str) -> np.ndarray:
        if tok in out:
            return out[tok]
        return lm.points[int(tok[1:])]

    for p in layout.points:
        a = get(p.args[0])
        if p.op == "mid":
            v = (a + get(p.args[1])) * 0.5
        elif p.op == "lerp":
            b = get(p.args[1])
            v = a + p.weight * (b - a)
        elif p.op == "offset":
            v = a + p.weight * (get(p.args[1]) - get(p.args[2]))
        elif p.op == "top":
            v = np.array([a[0], 0.0])
        elif p.op == "bottom":
            v = np.array([a[0], h])
        elif p.op == "left":
            v = np.array([0.0, a[1]])
        else:  # right
            v = np.array([w, a[1]])
        out[p.name] = np.clip(v, 0.0, [w, h])
    return DerivedPoints(out)


def face_center_x(lm: Landmarks68, dp: DerivedPoints | None = None) -> float:
    dp = dp or derive_points(lm)
    return float(dp["face_center"][0])


def _resolve(tok: str, lm: Landmarks68, dp: DerivedPoints) -> np.ndarray:
    w, h = float(lm.width), float(lm.height)
    if tok == "TL":
        return np.array([0.0, 0.0])
    if tok == "TR":
        return np.array([w, 0.0])
    if tok == "BR":
        return np.array([w, h])
    if tok == "BL":
        return np.array([0.0, h])
    if tok[0] == "L" and tok[1:].isdigit():
        return lm.points[int(tok[1:])]
    return dp[tok]


def partition_basic_rois(lm: Landmarks68, dp: DerivedPoints | None = None,
                         layout: RoiLayout | None = None, check: bool = True) -> list[BasicRoI]:
    """Instantiate the 43 basic RoI polygons for one face.

    With ``check`` on, each polygon must have non-zero area, be simple, and
    keep the orientation every polygon has in the chart; a flipped polygon
    means the face folded over and the regions would overlap.

    Raises:
        DegenerateRegionError: naming the first offending RoI.
    """
    layout = layout or default_layout()
    dp = dp or derive_points(lm, layout)
    rois = []
    for roi_no in range(1, N_BASIC_ROIS + 1):
        toks = layout.rois[roi_no]
        poly = np.array([_resolve(t, lm, dp) for t in toks], dtype=np.float64)
        roi = BasicRoI(roi_no, poly, toks)
        if check:
            area = polygon_area(poly)
            if area == 0.0:
                raise DegenerateRegionError(roi_no, "zero area")
            if area > 0.0:
                raise DegenerateRegionError(roi_no, "orientation flipped (face folds over)")
            if not is_simple(poly):
                raise DegenerateRegionError(roi_no, "self-intersecting polygon")
        rois.append(roi)
    return rois


def label_map(rois: list[BasicRoI], width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Assign each pixel to a basic RoI.

    Returns ``(owner, claims)``: ``owner`` holds the roi_no of each pixel (0
    if unclaimed) and ``claims`` the number of polygons whose raster contains
    it. Where several claim a pixel the lowest roi_no wins.
    """
    owner = np.zeros((height, width), dtype=np.int16)
    claims = np.zeros((height, width), dtype=np.int16)
    for roi in sorted(rois, key=lambda r: r.roi_no, reverse=True):
        m = rasterize(roi.polygon, width, height)
        owner[m] = roi.roi_no
        claims += m
    return owner, claims
