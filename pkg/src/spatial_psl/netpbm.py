"""Binary PPM (P6) and PGM (P5) readers and writers."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _header(kind: bytes, width: int, height: int) -> bytes:
    return b"%s\n%d %d\n255\n" % (kind, width, height)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary P6."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("expected (H, W, 3) uint8 array")
    h, w = rgb.shape[:2]
    Path(path).write_bytes(_header(b"P6", w, h) + np.ascontiguousarray(rgb).tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    """Write an (H, W) uint8 array as binary P5."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError("expected (H, W) uint8 array")
    h, w = gray.shape
    Path(path).write_bytes(_header(b"P5", w, h) + np.ascontiguousarray(gray).tobytes())


def _read(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} file, got {fields[0]!r}")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    pos += 1  # single whitespace byte after maxval
    shape = (h, w, channels) if channels > 1 else (h, w)
    return np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=pos).reshape(shape).copy()


def read_ppm(path) -> np.ndarray:
    return _read(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    return _read(path, b"P5", 1)
