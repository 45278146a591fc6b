"""Versioned binary container for named float64 tensors.

Layout: an 8-byte magic, a little-endian u32 format version, a u64 header
length, a UTF-8 JSON header describing metadata and entry shapes/offsets,
then the raw tensor payload as little-endian float64 bytes.  Round trips
are bit-exact, which the restore-and-compare tests rely on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DLBICKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, entries: dict, meta: dict | None = None) -> None:
    """Write named arrays plus a JSON-serializable metadata dict."""
    index = []
    blobs = []
    offset = 0
    for key, arr in entries.items():
        # asarray, not ascontiguousarray: the latter turns 0-d scalars into (1,)
        a = np.asarray(arr, dtype=np.float64)
        raw = a.astype("<f8", copy=False).tobytes()
        index.append({"key": key, "shape": list(a.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "entries": index}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read back (entries, meta); fails loudly on wrong magic or truncation."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12:
        raise CheckpointError(f"{path}: only {len(data)} bytes, not a checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) < pos + hlen:
        raise CheckpointError(
            f"{path}: header claims {hlen} bytes but only {len(data) - pos} remain"
        )
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    entries = {}
    for ent in header["entries"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = pos + ent["offset"]
        end = start + 8 * count
        if end > len(data):
            raise CheckpointError(
                f"{path}: entry {ent['key']!r} needs bytes [{start}, {end}) "
                f"but the file has {len(data)}"
            )
        entries[ent["key"]] = (
            np.frombuffer(data[start:end], dtype="<f8").reshape(shape).copy()
        )
    return entries, header["meta"]
