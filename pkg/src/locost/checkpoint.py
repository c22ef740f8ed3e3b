"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"LCST"  u32 version  u32 json_len  json_bytes
    repeated until EOF:
        u32 name_len  name_bytes  u32 rank  u64[rank] dims  u8 dtype  payload

``dtype`` is 0 for float32 and 1 for float64. The JSON blob is written with
sorted keys so that save -> load -> save reproduces the same bytes.
"""

import json
import os
import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"LCST"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


def dumps(header, tensors):
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for name, value in tensors.items():
        value = np.asarray(value)
        if value.dtype not in TAGS:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {value.dtype}")
        tag = TAGS[value.dtype]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(struct.pack("<B", tag))
        parts.append(np.ascontiguousarray(value, dtype=DTYPES[tag]).tobytes())
    return b"".join(parts)


def loads(data):
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a LCST checkpoint (bad magic)")
    version, blob_len = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(bytes(view[pos : pos + blob_len]).decode("utf-8"))
    pos += blob_len
    tensors = OrderedDict()
    while pos < len(view):
        try:
            (name_len,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos : pos + name_len]).decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", view, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            (tag,) = struct.unpack_from("<B", view, pos)
            pos += 1
        except struct.error as exc:
            raise CheckpointError("truncated checkpoint") from exc
        if tag not in DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for {name!r}")
        dtype = DTYPES[tag]
        nbytes = dtype.itemsize * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(view):
            raise CheckpointError(f"truncated payload for {name!r}")
        tensors[name] = np.frombuffer(view[pos : pos + nbytes], dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        pos += nbytes
    return header, tensors


def save(path, header, tensors):
    data = dumps(header, tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
