"""8-bit PNG encode/decode plus the linear [-1, 1] <-> [0, 255] mapping."""

from __future__ import annotations

import numpy as np
from PIL import Image


def to_uint8(image):
    """Map a (C, H, W) float image in [-1, 1] to HxW or HxWx3 uint8."""
    arr = np.clip((np.asarray(image) + 1.0) * 127.5, 0.0, 255.0)
    u8 = np.rint(arr).astype(np.uint8)
    if u8.shape[0] == 1:
        return u8[0]
    return u8.transpose(1, 2, 0)


def from_uint8(u8):
    """Inverse of ``to_uint8``: uint8 grayscale or RGB to (C, H, W) in [-1, 1]."""
    arr = np.asarray(u8, dtype=np.float64) / 127.5 - 1.0
    if arr.ndim == 2:
        return arr[None]
    return arr.transpose(2, 0, 1)


def save_image(path, image):
    """Write a (C, H, W) float image in [-1, 1] as 8-bit PNG."""
    u8 = to_uint8(image)
    Image.fromarray(u8, mode="L" if u8.ndim == 2 else "RGB").save(path, format="PNG")


def load_image(path):
    """Read a PNG/JPEG into (C, H, W) float64 in [-1, 1] (1 or 3 channels)."""
    with Image.open(path) as img:
        img.load()
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB" if "A" in img.mode or len(img.getbands()) >= 3 else "L")
        return from_uint8(np.asarray(img))


def save_mask(path, mask):
    """Write a binary H×W mask as an 8-bit PNG with values {0, 255}."""
    u8 = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def load_mask(path):
    with Image.open(path) as img:
        img.load()
        return (np.asarray(img.convert("L")) >= 128).astype(np.uint8)


def write_mosaic(path, grid, labels_path=None, labels=None, pad=2):
    """Tile a 2-D list of equal-shape (C, H, W) images into one PNG.

    ``labels``, when given, mirrors the grid and is written one line per
    cell ("row,col<TAB>label") so grid positions stay interpretable.
    """
    rows = len(grid)
    cols = max(len(r) for r in grid)
    c, h, w = grid[0][0].shape
    canvas = np.full((c, rows * h + (rows + 1) * pad, cols * w + (cols + 1) * pad), 0.5)
    for i, row in enumerate(grid):
        for j, img in enumerate(row):
            top = pad + i * (h + pad)
            left = pad + j * (w + pad)
            canvas[:, top : top + h, left : left + w] = img
    save_image(path, canvas)
    if labels_path is not None and labels is not None:
        lines = []
        for i, row in enumerate(labels):
            for j, label in enumerate(row):
                lines.append(f"{i},{j}\t{label}")
        with open(labels_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
