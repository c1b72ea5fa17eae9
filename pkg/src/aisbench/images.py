"""Binary PGM (P5) image-grid export for posterior visualizations."""

from __future__ import annotations

import numpy as np


def export_image_grid(images, rows: int, cols: int, path, height: int, width: int):
    """Tile images row-major into a rows x cols grid and write a P5 PGM file.

    Each image is a flat vector of height*width values in [0,1]; unused cells
    stay black. Pixels are round(255*value) clamped to [0,255].
    """
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if len(images) > rows * cols:
        raise ValueError(f"{len(images)} images exceed a {rows}x{cols} grid")
    for i, im in enumerate(images):
        if im.size != height * width:
            raise ValueError(
                f"image {i} has {im.size} values, cannot reshape to {height}x{width}"
            )
    canvas = np.zeros((rows * height, cols * width))
    for i, im in enumerate(images):
        r, c = divmod(i, cols)
        canvas[r * height : (r + 1) * height, c * width : (c + 1) * width] = (
            im.reshape(height, width)
        )
    payload = np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{cols * width} {rows * height}\n255\n".encode()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_pgm(path):
    """Parse a binary PGM written by export_image_grid; returns floats in [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    pixels = np.frombuffer(parts[3][: w * h], dtype=np.uint8).reshape(h, w)
    return pixels.astype(np.float64) / maxval
