"""The weight-store file format, from the bytes up.

Stores are flat name -> tensor maps with a fixed little-endian layout and a
trailing CRC32, so truncation and bit-rot are always detected.  This writes
a tiny store, hexdumps the interesting offsets, and round-trips a network
checkpoint through train -> deploy conversion.
"""

import os
import tempfile

import numpy as np

from rdrnet.network import VARIANTS, build
from rdrnet.store import WeightStore, convert_checkpoint, load, save, store_from_network

workdir = tempfile.mkdtemp(prefix="store-demo-")
tiny_path = os.path.join(workdir, "tiny.rdrw")

tiny = WeightStore.from_pairs([("demo.weight", np.array([[[[1.0]]]], np.float32))])
save(tiny, tiny_path)
blob = open(tiny_path, "rb").read()
print(f"{len(blob)}-byte store for one 1x1x1x1 tensor holding 1.0:")
print("  magic+header:", blob[:10].hex(" "))
print("  ...payload  :", blob[-8:-4].hex(" "), "(IEEE-754 1.0f, little-endian)")
print("  crc32       :", blob[-4:].hex(" "))

reloaded = load(tiny_path)
print("round trip exact:", np.array_equal(reloaded["demo.weight"],
                                          tiny["demo.weight"]))

# a real checkpoint: training structure, then its deployment conversion
cfg = VARIANTS["micro"]
train_store = store_from_network(build(cfg, 9))
deploy_store = convert_checkpoint(train_store, cfg)
print(f"\nmicro checkpoint: {len(train_store)} train tensors "
      f"-> {len(deploy_store)} deploy tensors")
print("first deploy names:", deploy_store.names[:3])

train_path = os.path.join(workdir, "micro_train.rdrw")
save(train_store, train_path)
print(f"train store on disk: {os.path.getsize(train_path):,} bytes")
