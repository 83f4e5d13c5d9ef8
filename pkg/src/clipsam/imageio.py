"""Binary PGM (P5) and PPM (P6) readers/writers plus the heatmap overlay.

PGM is the mandatory grayscale interchange format: 8-bit, maxval 255, values
mapped linearly to [0, 1]. Masks use only the values 0 and 255 and round-trip
exactly. PPM carries the color overlay artifacts.
"""
from __future__ import annotations

import numpy as np


def _quantize(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot write non-finite image values")
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def save_pgm(path, arr: np.ndarray) -> None:
    """Write a [0, 1] grayscale map as binary 8-bit PGM."""
    if arr.ndim != 2:
        raise ValueError("PGM payload must be 2-D")
    data = _quantize(arr)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_header(blob: bytes, magic: bytes):
    pos = 0
    fields = []
    if blob[:2] != magic:
        raise ValueError(f"not a {magic.decode()} file")
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    return fields, pos


def load_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a [0, 1] float map."""
    with open(path, "rb") as fh:
        blob = fh.read()
    (w, h, maxval), pos = _read_header(blob, b"P5")
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    count = w * h
    body = blob[pos:pos + count]
    if len(body) != count:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def save_ppm(path, rgb: np.ndarray) -> None:
    """Write an H x W x 3 uint8 array as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("PPM payload must be H x W x 3 uint8")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    (w, h, maxval), pos = _read_header(blob, b"P6")
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    count = w * h * 3
    body = blob[pos:pos + count]
    if len(body) != count:
        raise ValueError("truncated PPM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def heatmap_overlay(image: np.ndarray, heat: np.ndarray) -> np.ndarray:
    """Red-tinted overlay of a [0, 1] heatmap on a grayscale image."""
    if image.shape != heat.shape:
        raise ValueError("image and heatmap extents must match")
    gray = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    heat = np.clip(np.asarray(heat, dtype=np.float64), 0.0, 1.0)
    r = np.clip(gray * (1.0 - 0.6 * heat) + heat, 0.0, 1.0)
    g = gray * (1.0 - 0.6 * heat)
    b = gray * (1.0 - 0.6 * heat)
    return _quantize(np.stack([r, g, b], axis=-1))
