"""Parameter container: length-prefixed JSON header, then raw little-endian float64.

Layout: ``b"JPCK"``, uint64 LE header length, UTF-8 JSON header, data. The
header maps each name to ``{"shape", "dtype", "offset"}`` (offset in bytes
from the start of the data block); tensors are stored in name order.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Mapping, Tuple

import numpy as np

MAGIC = b"JPCK"
DTYPE = "<f8"


def dumps(params: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    tensors = {}
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.array(params[name], dtype=DTYPE, order="C")  # keeps 0-d shapes
        tensors[name] = {"shape": list(arr.shape), "dtype": DTYPE, "offset": offset}
        raw = arr.tobytes(order="C")
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": tensors, "meta": dict(meta or {})},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def loads(blob: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise ValueError("not a parameter container (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    data = memoryview(blob)[12 + hlen:]
    out = {}
    for name, spec in header["tensors"].items():
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = spec["offset"]
        arr = np.frombuffer(data[start:start + 8 * count], dtype=spec["dtype"]).reshape(shape)
        out[name] = arr.astype(np.float64)
    return out, header["meta"]
