"""Binary tensor files (checkpoints, correspondence dumps).

Layout, all integers little-endian::

    magic   8 bytes  b"MKTENSOR"
    version u32      (currently 1)
    count   u32
    count x { name_len u16, name utf-8, ndim u8, dims u64[ndim], payload f64[prod(dims)] }
    crc32   u32      over every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"MKTENSOR"
VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})" if offset is not None else message)


class VersionMismatchError(CheckpointError):
    pass


def dumps_tensors(tensors: dict) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} cannot be encoded")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def loads_tensors(buf: bytes) -> dict:
    if len(buf) < 20:
        raise CheckpointError("file too short", offset=len(buf))
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic header", offset=0)
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported tensor file version {version} (expected {VERSION})", offset=8)
    (stored_crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    body_end = len(buf) - 4
    (count,) = struct.unpack_from("<I", buf, 12)
    pos = 16
    out = {}
    try:
        for _ in range(count):
            start = pos
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            if pos + nlen > body_end:
                raise CheckpointError("truncated tensor name", offset=start)
            try:
                name = buf[pos:pos + nlen].decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointError("tensor name is not utf-8", offset=pos) from None
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            if pos + 8 * size > body_end:
                raise CheckpointError(f"truncated payload for {name!r}", offset=pos)
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error:
        raise CheckpointError("truncated tensor header", offset=pos) from None
    if pos != body_end:
        raise CheckpointError("trailing bytes after last tensor", offset=pos)
    if zlib.crc32(buf[:body_end]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checksum mismatch", offset=body_end)
    return out


def save_tensors(path, tensors: dict):
    Path(path).write_bytes(dumps_tensors(tensors))


def load_tensors(path) -> dict:
    return loads_tensors(Path(path).read_bytes())
