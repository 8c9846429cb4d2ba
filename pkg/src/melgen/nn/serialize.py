"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..5   magic ``b"MGCKPT"``
    bytes 6..7   format version (uint16), currently 1
    bytes 8..11  header length N (uint32)
    bytes 12..   UTF-8 JSON header of N bytes:
                   {"model_kind": str,
                    "config": {...},            # echo of the build config
                    "extra": {...},
                    "params": [{"name": str, "shape": [int...],
                                "offset": int, "nbytes": int}, ...]}
    then         concatenated float32 little-endian payloads, in the order
                 listed in "params"; offsets are relative to payload start.

The layout is stable across releases; readers must reject unknown versions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MGCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model_kind: str
    config: dict
    arrays: dict[str, np.ndarray]
    extra: dict


def save_checkpoint(path, model_kind: str, config: dict,
                    arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    entries = []
    payloads = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": data.nbytes})
        payloads.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"model_kind": model_kind, "config": config,
                         "extra": extra or {}, "params": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in payloads:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(6)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<H", f.read(2))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    arrays = {}
    for entry in header["params"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        flat = np.frombuffer(payload[start:start + nbytes], dtype="<f4")
        arrays[entry["name"]] = flat.reshape(entry["shape"]).copy()
    return Checkpoint(model_kind=header["model_kind"], config=header["config"],
                      arrays=arrays, extra=header.get("extra", {}))
