"""Checkpoint file: ``AURKCKPT`` magic, u32 version, u64 header length,
UTF-8 JSON header, then the raw little-endian float64 payload of every array
in header order. No timestamps, so equal states give equal bytes."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from aurk.errors import FormatError, VersionError
from aurk.nn.ops import Param
from aurk.nn.optim import OptimState

MAGIC = b"AURKCKPT"
VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, Param], meta: dict,
                    state: OptimState | None = None) -> None:
    arrays: list[tuple[str, np.ndarray]] = [(f"param/{k}", p.value) for k, p in params.items()]
    opt = None
    if state is not None:
        arrays += [(f"velocity/{k}", v) for k, v in state.velocity.items()]
        opt = {"lr": state.lr, "momentum": state.momentum, "weight_decay": state.weight_decay,
               "epoch": state.epoch, "step_count": state.step_count}
    header = {"meta": meta, "optim": opt,
              "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays]}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(hb)) + hb)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, Param], dict, OptimState | None]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    off = 8 + 12
    header = json.loads(data[off:off + hlen])
    off += hlen
    params: dict[str, Param] = {}
    velocity: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if off + 8 * count > len(data):
            raise FormatError(f"{path}: truncated payload at {entry['name']}")
        a = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        kind, name = entry["name"].split("/", 1)
        if kind == "param":
            params[name] = Param(a)
        else:
            velocity[name] = a
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    state = None
    if header["optim"] is not None:
        state = OptimState(velocity=velocity, **header["optim"])
    return params, header["meta"], state
