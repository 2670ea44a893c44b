"""Versioned binary checkpoint: named float32 tensors + JSON metadata.

Layout (all integers little-endian):
  magic b"GDTC" | u32 version | u32 meta_len | meta JSON (utf-8)
  u32 n_tensors | per tensor: u16 name_len | name | u8 ndim | u32 dims...
                              | float32 LE data
Files are written atomically (temp + rename).
"""

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

MAGIC = b"GDTC"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict                      # name -> float32 ndarray
    meta: dict = field(default_factory=dict)

    def param_bytes(self):
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f4").tobytes())
        return h.hexdigest()[:16]


def save_checkpoint(ckpt, path):
    blobs = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    blobs.append(struct.pack("<I", len(meta)))
    blobs.append(meta)
    blobs.append(struct.pack("<I", len(ckpt.params)))
    for name, tensor in ckpt.params.items():
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        nb = name.encode()
        blobs.append(struct.pack("<H", len(nb)))
        blobs.append(nb)
        blobs.append(struct.pack("<B", arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        blobs.append(arr.tobytes())
    data = b"".join(blobs)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = rd.unpack("<I")
    meta = json.loads(rd.take(meta_len).decode())
    (n_tensors,) = rd.unpack("<I")
    params = {}
    for _ in range(n_tensors):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode()
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(shape).copy()
        params[name] = arr
    return Checkpoint(params, meta)


def load_detector_checkpoint(path, cfg):
    """Load and validate every expected tensor name and shape for ``cfg``."""
    ckpt = load_checkpoint(path)
    expected = cfg.param_shapes()
    missing = set(expected) - set(ckpt.params)
    extra = set(ckpt.params) - set(expected)
    if missing or extra:
        raise CheckpointError(
            f"checkpoint {path} does not match architecture: "
            f"missing={sorted(missing)} unexpected={sorted(extra)}"
        )
    for name, shape in expected.items():
        if tuple(ckpt.params[name].shape) != tuple(shape):
            raise CheckpointError(
                f"tensor {name} has shape {ckpt.params[name].shape}, expected {shape}"
            )
    return ckpt
