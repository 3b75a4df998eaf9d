"""Image grids as binary PGM (P5, maxval 255)."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


def to_bytes(images) -> np.ndarray:
    """Map [0, 1] floats to uint8 with rounding (values outside are clipped)."""
    return np.round(np.clip(np.asarray(images, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def make_grid(rows: list, image_shape: tuple, pad: int = 1) -> np.ndarray:
    """Tile ``rows`` (each a list/array of flat images) into one 2D array.

    Padding pixels are 0; all rows must hold the same number of images.
    """
    h, w = image_shape
    cols = {len(r) for r in rows}
    if len(cols) != 1:
        raise ConfigError(f"grid rows have different lengths: {sorted(cols)}")
    ncol = cols.pop()
    out = np.zeros((len(rows) * (h + pad) + pad, ncol * (w + pad) + pad))
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            out[y:y + h, x:x + w] = np.asarray(img, dtype=np.float64).reshape(h, w)
    return out


def write_pgm(path, image) -> None:
    data = to_bytes(image)
    if data.ndim != 2:
        raise ConfigError(f"PGM needs a 2D array, got shape {data.shape}")
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+255\s")


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    # exactly one whitespace byte after maxval; pixel bytes may look like whitespace
    match = _PGM_HEADER.match(blob)
    if match is None:
        raise DataError(f"{path} is not a P5 PGM with maxval 255")
    width, height = int(match.group(1)), int(match.group(2))
    pixels = np.frombuffer(blob[match.end():], dtype=np.uint8)
    if pixels.size != width * height:
        raise DataError(f"{path}: expected {width * height} pixels, found {pixels.size}")
    return pixels.reshape(height, width)


def reconstruction_rows(real, recon, per_row: int) -> list:
    """Odd rows (1st, 3rd, ...) real images, each followed by its reconstructions."""
    rows = []
    for start in range(0, len(real) - per_row + 1, per_row):
        rows.append(list(real[start:start + per_row]))
        rows.append(list(recon[start:start + per_row]))
    return rows
