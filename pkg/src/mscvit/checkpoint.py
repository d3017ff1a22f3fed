"""Versioned little-endian checkpoint container.

Layout::

    magic      8 bytes  b"MSCVITCK"
    version    u32
    config     u32 length + UTF-8 text (flat key = value echo)
    meta       u32 length + UTF-8 text (key = value lines)
    count      u32
    count x    u16 name length, UTF-8 name,
               u8 dtype code (0 float32, 1 float64),
               u8 rank, rank x u32 extents,
               raw little-endian data
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MSCVITCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config_text: str = ""
    meta: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)


def _text_block(text):
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_checkpoint(path, ckpt):
    parts = [MAGIC, struct.pack("<I", VERSION), _text_block(ckpt.config_text)]
    parts.append(_text_block("".join(f"{k} = {v}\n" for k, v in ckpt.meta.items())))
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"cannot store {name} of dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated at byte offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self):
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def read_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint (bad magic bytes)")
    r = _Reader(buf)
    r.take(8)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    ckpt = Checkpoint(config_text=r.text())
    for line in r.text().splitlines():
        k, _, v = line.partition("=")
        ckpt.meta[k.strip()] = v.strip()
    (count,) = r.unpack("<I")
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape)
        ckpt.tensors[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes after the last tensor")
    return ckpt
