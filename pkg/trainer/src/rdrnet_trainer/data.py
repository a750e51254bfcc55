"""Synthetic segmentation scenes: disks, rectangles, and diagonal stripes
on a noisy background.

Each class has its own color family so the task is learnable at toy scale,
but geometry still matters (colors overlap under noise).  Samples are a
pure function of (seed, split, index), and the two splits draw from
disjoint index namespaces, so train and val can never share a sample.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

CLASSES = ("background", "disk", "rectangle", "stripe")
NUM_CLASSES = len(CLASSES)

# color families per class (mean RGB); noise is added on top
_CLASS_COLORS = {
    0: (110, 110, 110),
    1: (200, 70, 60),
    2: (60, 180, 80),
    3: (70, 90, 200),
}
_VAL_INDEX_BASE = 1_000_000  # keeps val indices disjoint from train's


@dataclass(frozen=True)
class SyntheticSceneSpec:
    canvas_hw: tuple = (64, 128)
    shape_count: tuple = (2, 5)   # inclusive range; (0, 0) = background only
    noise: float = 12.0           # additive uniform noise in 8-bit units
    train_size: int = 512
    val_size: int = 128
    seed: int = 20240601

    def __post_init__(self):
        h, w = self.canvas_hw
        if h % 64 or w % 64:
            raise ValueError("canvas dims must be multiples of 64")
        lo, hi = self.shape_count
        if lo < 0 or hi < lo:
            raise ValueError(f"bad shape_count range {self.shape_count}")


def _sample_rng(spec, split, index):
    if split == "val":
        index += _VAL_INDEX_BASE
    return np.random.default_rng((spec.seed, index))


def render_sample(spec: SyntheticSceneSpec, split: str, index: int):
    """Returns (image uint8 (h, w, 3), labels uint8 (h, w))."""
    rng = _sample_rng(spec, split, index)
    h, w = spec.canvas_hw
    labels = np.zeros((h, w), np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]

    n_shapes = int(rng.integers(spec.shape_count[0], spec.shape_count[1] + 1))
    for _ in range(n_shapes):
        kind = int(rng.integers(1, NUM_CLASSES))
        if kind == 1:  # disk
            r = int(rng.integers(min(h, w) // 8, min(h, w) // 3))
            cy = int(rng.integers(0, h))
            cx = int(rng.integers(0, w))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        elif kind == 2:  # axis-aligned rectangle
            rh = int(rng.integers(h // 6, h // 2))
            rw = int(rng.integers(w // 8, w // 3))
            y0 = int(rng.integers(0, h - rh + 1))
            x0 = int(rng.integers(0, w - rw + 1))
            mask = (yy >= y0) & (yy < y0 + rh) & (xx >= x0) & (xx < x0 + rw)
        else:  # diagonal stripe
            angle = rng.uniform(0, np.pi)
            width = rng.uniform(min(h, w) / 10, min(h, w) / 4)
            offset = rng.uniform(-0.5, 0.5) * (h + w) / 2
            d = xx * np.cos(angle) + yy * np.sin(angle) - (h + w) / 4 - offset
            mask = np.abs(d) <= width / 2
        labels[mask] = kind

    image = np.empty((h, w, 3), np.float64)
    for cls, color in _CLASS_COLORS.items():
        sel = labels == cls
        for ch in range(3):
            image[..., ch][sel] = color[ch]
    image += rng.uniform(-spec.noise, spec.noise, image.shape)
    # mild global illumination shift so color alone is not quite enough
    image += rng.uniform(-10, 10)
    return np.clip(image, 0, 255).astype(np.uint8), labels


def write_ppm(path, rgb):
    with open(path, "wb") as fh:
        fh.write(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode())
        fh.write(np.ascontiguousarray(rgb, np.uint8).tobytes())


def write_pgm(path, gray):
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(np.ascontiguousarray(gray, np.uint8).tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        assert fh.readline().strip() == b"P6"
        w, h = map(int, fh.readline().split())
        assert fh.readline().strip() == b"255"
        return np.frombuffer(fh.read(w * h * 3), np.uint8).reshape(h, w, 3).copy()


def read_pgm(path):
    with open(path, "rb") as fh:
        assert fh.readline().strip() == b"P5"
        w, h = map(int, fh.readline().split())
        assert fh.readline().strip() == b"255"
        return np.frombuffer(fh.read(w * h), np.uint8).reshape(h, w).copy()


def sample_digest(image, labels) -> str:
    return hashlib.sha256(image.tobytes() + labels.tobytes()).hexdigest()


def generate_dataset(spec: SyntheticSceneSpec, root):
    """Writes train/ and val/ directories of img_*.ppm + lbl_*.pgm pairs,
    plus a manifest recording the generating spec."""
    os.makedirs(root, exist_ok=True)
    manifest = {
        "seed": spec.seed,
        "canvas_hw": list(spec.canvas_hw),
        "shape_count": list(spec.shape_count),
        "noise": spec.noise,
        "classes": list(CLASSES),
        "splits": {},
        "first_sample_sha256": {},
    }
    for split, size in (("train", spec.train_size), ("val", spec.val_size)):
        split_dir = os.path.join(root, split)
        os.makedirs(split_dir, exist_ok=True)
        for i in range(size):
            image, labels = render_sample(spec, split, i)
            write_ppm(os.path.join(split_dir, f"img_{i:05d}.ppm"), image)
            write_pgm(os.path.join(split_dir, f"lbl_{i:05d}.pgm"), labels)
            if i == 0:
                manifest["first_sample_sha256"][split] = sample_digest(image, labels)
        manifest["splits"][split] = size
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
