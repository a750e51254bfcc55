"""Writer/reader for the engine's binary weight-store format.

Layout: "RDRW", u16 version 1, u32 count, then per tensor u16 name length +
UTF-8 name, u8 dtype (0 f32 / 1 f64), u8 rank, rank x u64 dims, raw
little-endian payload; trailing CRC32 of everything before it.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_MAGIC = b"RDRW"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_store(pairs, path):
    chunks = [_MAGIC, struct.pack("<HI", 1, len(pairs))]
    for name, arr in pairs:
        arr = np.ascontiguousarray(arr)
        code = 0 if arr.dtype == np.float32 else 1
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(_DTYPES[code], copy=False).tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


def read_store(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic")
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != struct.unpack("<I", blob[-4:])[0]:
        raise ValueError(f"{path}: checksum mismatch")
    version, count = struct.unpack("<HI", blob[4:10])
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    pos, out = 10, {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", blob[pos:pos + 2]); pos += 2
        name = blob[pos:pos + name_len].decode("utf-8"); pos += name_len
        code, rank = struct.unpack("<BB", blob[pos:pos + 2]); pos += 2
        dims = struct.unpack(f"<{rank}Q", blob[pos:pos + 8 * rank]); pos += 8 * rank
        dtype = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(blob[pos:pos + size], dtype).reshape(dims).copy()
        pos += size
    return out
