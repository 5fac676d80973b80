"""Grayscale image file I/O: 8-bit PNG and ASCII PGM (P2).

Pixel values are scaled to [0, 1] floats internally and quantized to
8 bits on write.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage


def read_image(path: str) -> np.ndarray:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return _read_pgm(path)
    if ext == ".png":
        with PILImage.open(path) as im:
            return np.asarray(im.convert("L"), dtype=float) / 255.0
    raise ValueError(f"unsupported image format: {path!r} (use .png or .pgm)")


def write_image(path: str, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("expected a 2D grayscale image")
    quant = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        _write_pgm(path, quant)
    elif ext == ".png":
        PILImage.fromarray(quant, mode="L").save(path)
    else:
        raise ValueError(f"unsupported image format: {path!r} (use .png or .pgm)")


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path!r} is not an ASCII PGM (P2) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:]], dtype=float)
    if data.size != w * h:
        raise ValueError(f"PGM pixel count {data.size} does not match {w}x{h}")
    return data.reshape(h, w) / maxval


def _write_pgm(path: str, quant: np.ndarray) -> None:
    h, w = quant.shape
    lines = ["P2", f"{w} {h}", "255"]
    for row in quant:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
