"""Single-file array container, version tag ``HCF1``.

Layout: the 4-byte magic ``HCF1``, a little-endian uint32 header length,
a UTF-8 JSON header, then every array as little-endian float64 in header
order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import IoError

MAGIC = b"HCF1"


def write_container(path, kind: str, arrays: dict, meta: dict | None = None) -> None:
    names = list(arrays)
    header = {
        "kind": kind,
        "meta": meta or {},
        "arrays": [{"name": k, "shape": list(np.shape(arrays[k]))} for k in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())


def read_container(path):
    """Return ``(kind, arrays, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise IoError(f"{path}: not an HCF1 container")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IoError(f"{path}: corrupt container header") from exc
    offset = 8 + hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise IoError(f"{path}: truncated array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    return header["kind"], arrays, header["meta"]
