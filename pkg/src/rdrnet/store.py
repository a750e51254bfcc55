"""Bit-exact binary weight serialization and train->deploy checkpoint
conversion.

File layout (all integers little-endian):

    magic   4 bytes  "RDRW"
    version u16      currently 1
    count   u32      number of tensors
    then per tensor:
        name_len u16, name UTF-8
        dtype    u8   0 = float32, 1 = float64
        rank     u8
        dims     rank x u64
        payload  row-major little-endian values
    crc32   u32      of every preceding byte

Writes are atomic (temp file + rename).  Round-tripping a store reproduces
the file byte for byte.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from collections import OrderedDict

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    ContractError,
    MissingTensorError,
    StoreError,
    TruncatedError,
    VersionError,
)

MAGIC = b"RDRW"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class WeightStore:
    """Ordered name -> array mapping with unique, dot-separated names."""

    def __init__(self):
        self._tensors = OrderedDict()

    @classmethod
    def from_pairs(cls, pairs):
        store = cls()
        for name, arr in pairs:
            store.add(name, arr)
        return store

    def add(self, name, arr):
        if name in self._tensors:
            raise ContractError(f"duplicate tensor name {name!r}")
        if not name or not all(part for part in name.split(".")):
            raise ContractError(f"malformed tensor name {name!r}")
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES_BY_KIND:
            raise ContractError(
                f"{name!r}: unsupported dtype {arr.dtype}; stores hold float32/float64"
            )
        self._tensors[name] = arr

    @property
    def names(self):
        return list(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __getitem__(self, name):
        try:
            return self._tensors[name]
        except KeyError:
            raise MissingTensorError(f"store has no tensor named {name!r}") from None

    def items(self):
        return self._tensors.items()


def save(store: WeightStore, path):
    """Serialize; the write lands atomically via a temp file + rename."""
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(store))]
    for name, arr in store.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ContractError(f"tensor name too long: {name[:40]!r}...")
        code = _CODES_BY_KIND[arr.dtype]
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())
    blob = b"".join(chunks)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rdrw-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise TruncatedError(
                f"file ends inside {what} (needed {n} bytes at offset {self.pos})"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load(path) -> WeightStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 2 + 4 + 4:
        raise TruncatedError(f"file is only {len(blob)} bytes long")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"not a weight store (magic {blob[:4]!r})")
    crc_stored = struct.unpack("<I", blob[-4:])[0]
    crc_actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise ChecksumError(
            f"CRC32 mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"
        )

    r = _Reader(blob[:-4])
    r.take(len(MAGIC), "magic")
    version, count = r.unpack("<HI", "header")
    if version != VERSION:
        raise VersionError(f"unsupported store version {version} (expected {VERSION})")
    store = WeightStore()
    for i in range(count):
        (name_len,) = r.unpack("<H", f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        code, rank = r.unpack("<BB", f"{name!r} descriptor")
        if code not in _DTYPE_CODES:
            raise StoreError(f"{name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}Q", f"{name!r} dims") if rank else ()
        n_elems = 1
        for d in dims:
            n_elems *= d
        dtype = _DTYPE_CODES[code]
        payload = r.take(n_elems * dtype.itemsize, f"{name!r} payload")
        arr = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
        store.add(name, arr)
    if r.pos != len(r.blob):
        raise StoreError(f"{len(r.blob) - r.pos} unexpected trailing bytes")
    return store


# ---------------------------------------------------------------------------
# checkpoint conversion
# ---------------------------------------------------------------------------

def store_from_network(net) -> WeightStore:
    from .network import named_tensors

    return WeightStore.from_pairs(
        (name, arr) for name, arr, _ in named_tensors(net)
    )


def convert_checkpoint(train_store: WeightStore, cfg) -> WeightStore:
    """Rewrite a training-structure checkpoint into its deployment form."""
    from .network import build, reparameterize_network

    if any(name.endswith(".fused.weight") for name in train_store.names):
        raise ContractError(
            "store already holds deployment-form tensors; nothing left to fold"
        )
    net = build(cfg, train_store)
    return store_from_network(reparameterize_network(net))
