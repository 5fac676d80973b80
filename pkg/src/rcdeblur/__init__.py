"""Blind grayscale image deblurring via rank-one lifting with row/column sparsity."""

from .transforms import (
    fft2,
    ifft2,
    haar_analysis,
    haar_synthesis,
    default_haar_depth,
    KernelBasis,
    ImageBasis,
)

__all__ = [
    "fft2",
    "ifft2",
    "haar_analysis",
    "haar_synthesis",
    "default_haar_depth",
    "KernelBasis",
    "ImageBasis",
]

__version__ = "0.1.0"
