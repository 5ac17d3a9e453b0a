"""Single-file checkpoints: versioned JSON header followed by raw float64 tensors.

Layout::

    b"GAACKPT\\n"                magic
    uint32 LE                    format version
    uint64 LE                    header length in bytes
    header (UTF-8 JSON)          {"meta": {...}, "tensors": [{"name", "shape", "offset"}]}
    tensor payload               little-endian float64, row-major, in header order

The bytes depend only on the contents, so identical runs write identical files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from gaa.errors import InputError

MAGIC = b"GAACKPT\n"
VERSION = 1


def save(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(tensors)
    entries, offset = [], 0
    for name in names:
        arr = np.asarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", VERSION, len(header)))
            fh.write(header)
            for name in names:
                fh.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise InputError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", blob, pos)
    if version != VERSION:
        raise InputError(f"{path}: checkpoint format {version}, this build reads {VERSION}")
    pos += struct.calcsize("<IQ")
    header = json.loads(blob[pos:pos + hlen].decode())
    pos += hlen
    tensors = {}
    for e in header["tensors"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = pos + e["offset"]
        if start + 8 * count > len(blob):
            raise InputError(f"{path}: truncated tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape).copy()
    return tensors, header["meta"]
