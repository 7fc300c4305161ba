"""Content-addressed file cache for per-frame AU boxes.

Layout (``CACHE_LAYOUT`` = ``boxes-v1``)::

    <cache_dir>/boxes-v1/<table digest[:16]>-<layout digest[:16]>/<key[:2]>/<key>.json

``key`` is the SHA-256 of the frame's landmark record. Each entry stores the
frame id, the full table digest and the boxes; a lookup only hits if the
stored digest matches the active table.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from aurk.errors import CacheMissError
from aurk.geometry.landmarks import Landmarks68
from aurk.partition import AUBoundingBox, AUPartitionTable

CACHE_LAYOUT = "boxes-v1"


def frame_key(lm: Landmarks68) -> str:
    return hashlib.sha256(",".join(lm.to_record()).encode()).hexdigest()


@dataclass
class MaskCacheEntry:
    frame_id: str
    boxes: list[AUBoundingBox]
    table_digest: str


class BoxCache:
    def __init__(self, root: str | Path, table: AUPartitionTable, layout_digest: str = ""):
        self.table = table
        self.layout_digest = layout_digest
        self.dir = Path(root) / CACHE_LAYOUT / f"{table.digest[:16]}-{layout_digest[:16]}"
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.dir / key[:2] / f"{key}.json"

    def get(self, lm: Landmarks68) -> MaskCacheEntry | None:
        p = self._path(frame_key(lm))
        try:
            data = json.loads(p.read_text())
        except (FileNotFoundError, json.JSONDecodeError):
            self.misses += 1
            return None
        if data.get("table_digest") != self.table.digest:
            self.misses += 1
            return None
        self.hits += 1
        boxes = [AUBoundingBox(b["group_id"], *b["box"], side=b["side"]) for b in data["boxes"]]
        return MaskCacheEntry(data["frame_id"], boxes, data["table_digest"])

    def put(self, lm: Landmarks68, boxes: list[AUBoundingBox]) -> None:
        p = self._path(frame_key(lm))
        p.parent.mkdir(parents=True, exist_ok=True)
        data = {"frame_id": lm.frame_id, "table_digest": self.table.digest,
                "boxes": [{"group_id": b.group_id, "side": b.side, "box": list(b.as_tuple())} for b in boxes]}
        tmp = p.with_suffix(f".tmp{os.getpid()}")
        tmp.write_text(json.dumps(data, sort_keys=True))
        os.replace(tmp, p)

    def require(self, lm: Landmarks68) -> MaskCacheEntry:
        e = self.get(lm)
        if e is None:
            raise CacheMissError(f"no cached boxes for frame {lm.frame_id!r} under {self.dir}; "
                                 "run 'aurk partition' with this config first")
        return e
