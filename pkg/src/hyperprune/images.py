"""Binary PGM (P5) grayscale output, no imaging dependency needed."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def make_grid(images: np.ndarray, rows: int = 8, cols: int = 8, pad: int = 1) -> np.ndarray:
    """Tile (N, C, H, W) images in [0, 1] into one 2-D array; channels are averaged."""
    n, _, h, w = images.shape
    gray = images.mean(axis=1)
    grid = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad))
    for idx in range(min(n, rows * cols)):
        r, c = divmod(idx, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[y:y + h, x:x + w] = gray[idx]
    return grid


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D array in [0, 1] as 8-bit binary PGM."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pixels = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return pixels.astype(np.float64) / maxval
