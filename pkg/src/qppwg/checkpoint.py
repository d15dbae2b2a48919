"""Checkpoint container: JSON header followed by named little-endian float32 blobs.

Layout::

    b"QPPWGCKP"          8-byte magic
    uint32 LE            format version
    uint64 LE            header length in bytes
    header               UTF-8 JSON; ``header["blobs"]`` lists name/shape/offset
    blob data            concatenated '<f4' arrays, offsets relative to data start
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

MAGIC = b"QPPWGCKP"
VERSION = 1


def save_checkpoint(path, header: dict, blobs: dict) -> Path:
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, arr in blobs.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    head = dict(header)
    head["blobs"] = entries
    raw = json.dumps(head, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw)))
        fh.write(raw)
        for chunk in chunks:
            fh.write(chunk)
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:8] != MAGIC or len(buf) < 8 + struct.calcsize("<IQ"):
        raise ConfigurationError(f"{path} is not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", buf, 8)
    if version != VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{path}: unreadable checkpoint header: {exc}") from exc
    data_start = start + hlen
    blobs = {}
    for entry in header.pop("blobs"):
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if data_start + entry["offset"] + 4 * count > len(buf):
            raise ConfigurationError(f"{path}: blob {entry['name']} is truncated")
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=data_start + entry["offset"])
        blobs[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return header, blobs
