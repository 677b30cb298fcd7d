"""Checkpoint container for named float64 tensors.

Layout (all sections back to back)::

    b"MDFCKPT\\n"                      magic line
    b"%016d\\n" % len(header)          header byte length, zero padded
    header                             UTF-8 JSON, keys sorted
    payload                            little-endian float64 data

The JSON header is ``{"format_version": 1, "metadata": {...}, "tensors":
[{"name", "shape", "offset", "count"}, ...]}`` where ``offset`` is the byte
offset into the payload and ``count`` the number of float64 values. The
writer is byte-deterministic: same tensors and metadata give the same file.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

MAGIC = b"MDFCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: Dict[str, np.ndarray], metadata: Dict[str, Any] | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"format_version": FORMAT_VERSION, "metadata": metadata or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + b"%016d\n" % len(header) + header + b"".join(chunks)


def loads(blob: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not an MDF checkpoint (bad magic)")
    pos = len(MAGIC)
    try:
        hlen = int(blob[pos:pos + 16])
    except ValueError:
        raise CheckpointError("corrupt header length") from None
    pos += 17
    header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    payload = blob[pos + hlen:]
    out = {}
    for e in header["tensors"]:
        end = e["offset"] + 8 * e["count"]
        if end > len(payload):
            raise CheckpointError(f"truncated payload for {e['name']}")
        arr = np.frombuffer(payload[e["offset"]:end], dtype="<f8").astype(np.float64)
        out[e["name"]] = arr.reshape(e["shape"])
    return out, header["metadata"]


def save(path: Union[str, Path], tensors: Dict[str, np.ndarray], metadata: Dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, metadata))


def load(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    return loads(Path(path).read_bytes())
