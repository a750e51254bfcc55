"""Image input/output for the inference and evaluation commands.

Accepted inputs: 8-bit RGB PNG and binary PPM (P6).  Outputs: binary PGM
(P5) class-index maps and palette-colored PNG/PPM overlays.

Engine input normalization is fixed at ``(v/255 - 0.5) / 0.5`` per channel;
any trainer producing weights for this engine must normalize identically.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor4, np_dtype

NORM_OFFSET = 0.5
NORM_SCALE = 0.5


def read_ppm(path) -> np.ndarray:
    """Binary P6, 8-bit; returns (h, w, 3) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ContractError(f"{path}: malformed PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise ContractError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ContractError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    need = w * h * 3
    payload = data[pos : pos + need]
    if len(payload) != need:
        raise ContractError(f"{path}: truncated PPM payload")
    return np.frombuffer(payload, np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, rgb: np.ndarray):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(f"PPM wants (h, w, 3) uint8, got {rgb.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode())
        fh.write(rgb.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary P5, 8-bit; returns (h, w) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ContractError(f"{path}: malformed PGM header")
        fields.append(data[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise ContractError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ContractError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    need = w * h
    payload = data[pos : pos + need]
    if len(payload) != need:
        raise ContractError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, np.uint8).reshape(h, w).copy()


def write_pgm(path, gray: np.ndarray):
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise DimensionError(f"PGM wants (h, w) uint8, got {gray.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(gray.tobytes())


def read_image(path) -> np.ndarray:
    """PNG or binary PPM -> (h, w, 3) uint8."""
    path = str(path)
    if path.lower().endswith(".ppm"):
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as img:
        if img.mode != "RGB":
            img = img.convert("RGB")
        return np.asarray(img, dtype=np.uint8).copy()


def write_image(path, rgb: np.ndarray):
    path = str(path)
    if path.lower().endswith(".ppm"):
        write_ppm(path, rgb)
        return
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(rgb, np.uint8), "RGB").save(path)


def image_to_input(rgb: np.ndarray, dtype="f32") -> Tensor4:
    """(h, w, 3) uint8 -> normalized (1, 3, h, w) tensor."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(f"expected (h, w, 3) image, got {rgb.shape}")
    dt = np_dtype(dtype)
    x = rgb.astype(dt) / dt(255.0)
    x = (x - dt(NORM_OFFSET)) / dt(NORM_SCALE)
    return Tensor4(np.ascontiguousarray(x.transpose(2, 0, 1)[None]))


def default_palette(num_classes) -> np.ndarray:
    """Deterministic distinct colors, one (r, g, b) row per class."""
    base = np.array(
        [
            (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25),
            (0, 130, 200), (245, 130, 48), (145, 30, 180), (70, 240, 240),
            (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128),
            (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
            (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128),
        ],
        dtype=np.uint8,
    )
    if num_classes <= len(base):
        return base[:num_classes]
    rng = np.random.default_rng(0)
    extra = rng.integers(0, 256, (num_classes - len(base), 3), dtype=np.uint8)
    return np.vstack([base, extra])


def load_palette(path, num_classes) -> np.ndarray:
    """Text palette: one 'r g b' triple per line."""
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ContractError(f"{path}:{line_no}: expected 'r g b'")
            rows.append([int(p) for p in parts])
    if len(rows) < num_classes:
        raise ContractError(
            f"palette has {len(rows)} colors but the network has {num_classes} classes"
        )
    arr = np.array(rows, dtype=np.int64)
    if ((arr < 0) | (arr > 255)).any():
        raise ContractError(f"{path}: palette entries must be in [0, 255]")
    return arr.astype(np.uint8)[:num_classes]


def colorize(class_map: np.ndarray, palette: np.ndarray) -> np.ndarray:
    return palette[class_map]
