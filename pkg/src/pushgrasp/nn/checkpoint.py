"""Portable binary checkpoint: magic, version, entry table, trailing CRC-32.

Layout (little-endian throughout):
    magic   4 bytes  b"PGSB"
    version u32
    count   u32
    entries count times:
        name_len u16, name utf-8 bytes
        dtype    u8 (0 = float32, 1 = float64, 2 = int64)
        ndim     u8, dims u32 each
        data     raw row-major little-endian
    crc32   u32 over every preceding byte
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = b"PGSB"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class BadChecksumError(CheckpointError):
    pass


class DuplicateNameError(CheckpointError):
    pass


def save(path, tensors: dict) -> None:
    """Write named arrays; duplicate names are impossible by dict contract."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


def load(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a PGSB checkpoint")
    body, crc_stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise BadChecksumError(f"{path}: CRC-32 mismatch")
    version, count = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode("utf-8")
        off += nlen
        tag, ndim = struct.unpack_from("<BB", body, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        dtype = _DTYPES.get(tag)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype tag {tag}")
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if ndim else dtype.itemsize
        count_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(body, dtype=dtype, count=count_items, offset=off).reshape(shape)
        off += nbytes
        if name in out:
            raise DuplicateNameError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr.copy()
    return out
