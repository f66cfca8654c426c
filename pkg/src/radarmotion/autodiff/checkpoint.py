"""Checkpoint container.

Layout::

    RMCKPT 1
    meta <json>                    (optional, one line)
    count <n>
    <name> <d0,d1,...> <elements> <byte offset>
    ...
    END
    <raw little-endian float64 payload, parameters in manifest order>

Byte offsets are relative to the first payload byte. A scalar has shape ``-``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "RMCKPT 1"


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    lines = [MAGIC]
    if meta is not None:
        lines.append("meta " + json.dumps(meta, sort_keys=True))
    lines.append(f"count {len(tensors)}")
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name may not contain whitespace: {name!r}")
        arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d shapes
        shape = ",".join(str(s) for s in arr.shape) or "-"
        lines.append(f"{name} {shape} {arr.size} {offset}")
        offset += arr.nbytes
        blobs.append(arr.tobytes())
    lines.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for b in blobs:
            fh.write(b)


def load(path) -> tuple[dict[str, np.ndarray], dict | None]:
    raw = Path(path).read_bytes()
    end = raw.index(b"\nEND\n") + len(b"\nEND\n")
    header = raw[:end].decode("ascii").splitlines()
    if header[0] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    meta = None
    i = 1
    if header[i].startswith("meta "):
        meta = json.loads(header[i][5:])
        i += 1
    count = int(header[i].split()[1])
    payload = raw[end:]
    out: dict[str, np.ndarray] = {}
    for line in header[i + 1:i + 1 + count]:
        name, shape, n, off = line.split()
        dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
        n, off = int(n), int(off)
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=off).astype(np.float64)
        out[name] = arr.reshape(dims)
    return out, meta
