"""Discrete transforms and basis constructions.

Conventions used throughout the package:

* Images are 2D float arrays (row-major), values nominally in [0, 1].
* The 2D DFT is unitary (scaled by 1/sqrt(L) in both directions), so
  Parseval holds symmetrically and operator adjoints need no extra
  scaling factors.
* The wavelet transform is the orthonormal 2D Haar multiresolution
  decomposition with the approximation block recursively placed in the
  top-left quadrant.
* Flat pixel/coefficient indices are row-major ascending.

All functions accept stacked inputs (leading batch axes) and transform
the trailing two axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SQRT2 = np.sqrt(2.0)


def fft2(img: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT of the trailing two axes."""
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[-1] == 0 or img.shape[-2] == 0:
        raise ValueError(f"image dimensions must be positive, got shape {img.shape}")
    return np.fft.fft2(img, axes=(-2, -1), norm="ortho")


def ifft2(spec: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Inverse unitary 2D DFT, returning a real image.

    The input must be the spectrum of a real signal: if the imaginary
    residual of the inverse transform exceeds ``tol`` times the signal
    norm, a ValueError is raised.
    """
    spec = np.asarray(spec)
    if spec.ndim < 2 or spec.shape[-1] == 0 or spec.shape[-2] == 0:
        raise ValueError(f"spectrum dimensions must be positive, got shape {spec.shape}")
    out = np.fft.ifft2(spec, axes=(-2, -1), norm="ortho")
    scale = np.linalg.norm(out)
    if scale > 0 and np.linalg.norm(out.imag) > tol * scale:
        raise ValueError("spectrum is not conjugate-symmetric: inverse transform is not real")
    return out.real


def default_haar_depth(shape: tuple[int, int]) -> int:
    """Deepest decomposition the grid supports: floor(log2(min(h, w)))."""
    return int(np.log2(min(shape[-2], shape[-1])))


def _check_haar_dims(shape, depth: int) -> None:
    h, w = shape[-2], shape[-1]
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if h % (1 << depth) or w % (1 << depth):
        raise ValueError(f"grid {h}x{w} not divisible by 2^{depth}")


def haar_analysis(img: np.ndarray, depth: int) -> np.ndarray:
    """Orthonormal 2D Haar decomposition, ``depth`` levels.

    Returns a coefficient field of the same shape; the level-``depth``
    approximation sits in the top-left corner block.
    """
    img = np.asarray(img, dtype=float)
    _check_haar_dims(img.shape, depth)
    out = img.copy()
    h, w = img.shape[-2], img.shape[-1]
    for lev in range(depth):
        hh, ww = h >> lev, w >> lev
        block = out[..., :hh, :ww]
        a = (block[..., 0::2] + block[..., 1::2]) / _SQRT2
        d = (block[..., 0::2] - block[..., 1::2]) / _SQRT2
        block = np.concatenate([a, d], axis=-1)
        a = (block[..., 0::2, :] + block[..., 1::2, :]) / _SQRT2
        d = (block[..., 0::2, :] - block[..., 1::2, :]) / _SQRT2
        out[..., :hh, :ww] = np.concatenate([a, d], axis=-2)
    return out


def haar_synthesis(coeffs: np.ndarray, depth: int) -> np.ndarray:
    """Inverse of :func:`haar_analysis`."""
    coeffs = np.asarray(coeffs, dtype=float)
    _check_haar_dims(coeffs.shape, depth)
    out = coeffs.copy()
    h, w = coeffs.shape[-2], coeffs.shape[-1]
    for lev in reversed(range(depth)):
        hh, ww = h >> lev, w >> lev
        block = out[..., :hh, :ww]
        a, d = block[..., : hh // 2, :], block[..., hh // 2 :, :]
        rec = np.empty_like(block)
        rec[..., 0::2, :] = (a + d) / _SQRT2
        rec[..., 1::2, :] = (a - d) / _SQRT2
        a, d = rec[..., :, : ww // 2], rec[..., :, ww // 2 :]
        block = np.empty_like(rec)
        block[..., :, 0::2] = (a + d) / _SQRT2
        block[..., :, 1::2] = (a - d) / _SQRT2
        out[..., :hh, :ww] = block
    return out


def _validate_indices(indices: np.ndarray, size: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size == 0:
        raise ValueError("index set must be non-empty")
    if idx.min() < 0 or idx.max() >= size:
        raise ValueError(f"indices out of range for grid of size {size}")
    if np.unique(idx).size != idx.size:
        raise ValueError("indices must be unique")
    return idx


@dataclass(frozen=True)
class KernelBasis:
    """Pixel-subset embedding: columns of a subsampled identity matrix.

    ``indices`` are flat row-major positions on the ``shape`` grid; a
    coefficient vector is scattered to those pixels with zeros elsewhere.
    """

    indices: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        h, w = self.shape
        idx = _validate_indices(self.indices, h * w)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "shape", (int(h), int(w)))

    @classmethod
    def from_bbox(cls, shape: tuple[int, int], box_h: int, box_w: int) -> "KernelBasis":
        """Bounding box of ``box_h`` x ``box_w`` pixels anchored at the grid top-left."""
        h, w = shape
        if not (1 <= box_h <= h and 1 <= box_w <= w):
            raise ValueError(f"bounding box {box_h}x{box_w} does not fit grid {h}x{w}")
        rows, cols = np.mgrid[:box_h, :box_w]
        return cls((rows * w + cols).ravel(), shape)

    @property
    def size(self) -> int:
        return self.indices.size

    def subset(self, keep: np.ndarray) -> "KernelBasis":
        """New basis restricted to positions ``keep`` (indices into this basis)."""
        return KernelBasis(self.indices[np.asarray(keep, dtype=np.intp)], self.shape)

    def embed(self, coeffs: np.ndarray) -> np.ndarray:
        """Scatter coefficients to grid pixels; (k,) -> (h, w), (k, r) -> (r, h, w)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.size:
            raise ValueError(f"expected {self.size} coefficients, got {coeffs.shape[0]}")
        h, w = self.shape
        if coeffs.ndim == 1:
            out = np.zeros(h * w)
            out[self.indices] = coeffs
            return out.reshape(h, w)
        out = np.zeros((coeffs.shape[1], h * w))
        out[:, self.indices] = coeffs.T
        return out.reshape(coeffs.shape[1], h, w)

    def extract(self, img: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`embed`: read the basis pixels off a field."""
        img = np.asarray(img)
        flat = img.reshape(*img.shape[:-2], -1)[..., self.indices]
        return flat if flat.ndim == 1 else np.moveaxis(flat, -1, 0).reshape(self.size, -1)


@dataclass(frozen=True)
class ImageBasis:
    """Subset of orthonormal Haar atoms identified by coefficient indices.

    A coefficient vector is scattered into the Haar coefficient field at
    ``indices`` and synthesized back to the pixel domain. Columns are
    mutually orthonormal because the full Haar map is orthogonal.
    """

    indices: np.ndarray
    shape: tuple[int, int]
    depth: int

    def __post_init__(self):
        h, w = self.shape
        _check_haar_dims((h, w), self.depth)
        idx = _validate_indices(self.indices, h * w)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "shape", (int(h), int(w)))

    @classmethod
    def full(cls, shape: tuple[int, int], depth: int | None = None) -> "ImageBasis":
        depth = default_haar_depth(shape) if depth is None else depth
        return cls(np.arange(shape[0] * shape[1]), shape, depth)

    @property
    def size(self) -> int:
        return self.indices.size

    def subset(self, keep: np.ndarray) -> "ImageBasis":
        return ImageBasis(self.indices[np.asarray(keep, dtype=np.intp)], self.shape, self.depth)

    def embed(self, coeffs: np.ndarray) -> np.ndarray:
        """Synthesize coefficients to the pixel domain; (n,) -> (h, w), (n, r) -> (r, h, w)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.size:
            raise ValueError(f"expected {self.size} coefficients, got {coeffs.shape[0]}")
        h, w = self.shape
        if coeffs.ndim == 1:
            cfield = np.zeros(h * w)
            cfield[self.indices] = coeffs
            return haar_synthesis(cfield.reshape(h, w), self.depth)
        cfield = np.zeros((coeffs.shape[1], h * w))
        cfield[:, self.indices] = coeffs.T
        return haar_synthesis(cfield.reshape(coeffs.shape[1], h, w), self.depth)

    def extract(self, img: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`embed`: analyze and gather the basis coefficients."""
        cfield = haar_analysis(np.asarray(img, dtype=float), self.depth)
        flat = cfield.reshape(*cfield.shape[:-2], -1)[..., self.indices]
        return flat if flat.ndim == 1 else np.moveaxis(flat, -1, 0).reshape(self.size, -1)


def kernel_embed(basis: KernelBasis, h: np.ndarray) -> np.ndarray:
    """Pixel-domain kernel from its basis coefficients (zero-padded to the grid)."""
    return basis.embed(h)


def image_embed(basis: ImageBasis, m: np.ndarray) -> np.ndarray:
    """Pixel-domain image from its Haar basis coefficients."""
    return basis.embed(m)
