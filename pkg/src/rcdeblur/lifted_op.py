"""Matrix-free lifted measurement operator and its adjoint.

The forward model couples an unknown kernel coefficient vector h (pixel
subset basis B) and image coefficient vector m (Haar subset basis C)
through the spectrum of their circular convolution. Lifting X = h m^T
makes the map linear; on factored iterates (Z, H) it evaluates as

    apply(Z, H)_l = sqrt(L) * sum_j (F B z_j)_l (F C h_j)_l

with F the unitary 2D DFT, which for rank-one factors equals the
unitary spectrum of (B h) circularly convolved with (C m). A K' x N
matrix is never materialized; everything runs in O(r L log L).

The adjoint maps a complex spectrum alpha to the real matrix
sqrt(L) * Re(Bhat^T diag(conj(alpha)) Chat), the convention under which
<apply(Z, H), alpha> = <Z H^T, adjoint(alpha)>_F holds with the real
inner product <u, v> = Re(u^H v).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import fft2


@dataclass(frozen=True)
class LiftedProblem:
    """One deblurring instance: bases, observed spectrum, and weight.

    ``y_hat`` is the flattened unitary spectrum of the blurred image and
    must be conjugate-symmetric (spectrum of a real signal). ``lam``
    weighs the group-sparsity penalty; 0 is accepted for the degenerate
    pure-nuclear-norm program used in tests.
    """

    kernel_basis: object  # anything with embed/extract/size/shape
    image_basis: object
    y_hat: np.ndarray
    lam: float

    def __post_init__(self):
        if self.kernel_basis.shape != self.image_basis.shape:
            raise ValueError("kernel and image bases must share the grid")
        y = np.asarray(self.y_hat, dtype=complex).ravel()
        h, w = self.kernel_basis.shape
        if y.size != h * w:
            raise ValueError(f"y_hat has length {y.size}, expected {h * w}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        object.__setattr__(self, "y_hat", y)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(K', N, L)."""
        h, w = self.kernel_basis.shape
        return (self.kernel_basis.size, self.image_basis.size, h * w)

    @property
    def grid(self) -> tuple[int, int]:
        return self.kernel_basis.shape


def _as_columns(mat: np.ndarray, rows: int, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim == 1:
        mat = mat[:, None]
    if mat.shape[0] != rows:
        raise ValueError(f"{name} has {mat.shape[0]} rows, expected {rows}")
    return mat


def factor_spectra(prob: LiftedProblem, Z: np.ndarray, H: np.ndarray):
    """Per-column spectra (Bhat Z, Chat H), each (r, L) complex.

    Shared intermediate for apply and both adjoint products; callers in
    hot loops compute it once per iterate. Both embeddings go through a
    single batched FFT call.
    """
    kp, n, L = prob.dims
    Z = _as_columns(Z, kp, "Z")
    H = _as_columns(H, n, "H")
    if Z.shape[1] != H.shape[1]:
        raise ValueError("Z and H must share the rank budget")
    r = Z.shape[1]
    fields = np.concatenate(
        [prob.kernel_basis.embed(Z), prob.image_basis.embed(H)], axis=0
    )
    spec = fft2(fields).reshape(2 * r, L)
    return spec[:r], spec[r:]


def apply(prob: LiftedProblem, Z: np.ndarray, H: np.ndarray, spectra=None) -> np.ndarray:
    """Evaluate the lifted operator on Z H^T; returns a complex L-vector."""
    bz, ch = factor_spectra(prob, Z, H) if spectra is None else spectra
    L = prob.dims[2]
    return np.sqrt(L) * np.einsum("jl,jl->l", bz, ch)


def residual(prob: LiftedProblem, Z: np.ndarray, H: np.ndarray, spectra=None) -> np.ndarray:
    """apply(Z, H) minus the observed spectrum."""
    return apply(prob, Z, H, spectra=spectra) - prob.y_hat


def adjoint_times_h(
    prob: LiftedProblem, alpha: np.ndarray, H: np.ndarray, ch=None
) -> np.ndarray:
    """Adjoint image of ``alpha`` applied to H: a real K' x r matrix.

    ``ch`` may pass the cached (r, L) image-side spectra from
    :func:`factor_spectra`.
    """
    kp, n, L = prob.dims
    alpha = np.asarray(alpha, dtype=complex).ravel()
    if alpha.size != L:
        raise ValueError(f"alpha has length {alpha.size}, expected {L}")
    if ch is None:
        H = _as_columns(H, n, "H")
        ch = fft2(prob.image_basis.embed(H)).reshape(H.shape[1], L)
    g = (np.conj(alpha)[None, :] * ch).reshape(ch.shape[0], *prob.grid)
    fields = fft2(g).real * np.sqrt(L)
    return prob.kernel_basis.extract(fields)


def adjoint_times_z(
    prob: LiftedProblem, alpha: np.ndarray, Z: np.ndarray, bz=None
) -> np.ndarray:
    """Transposed adjoint applied to Z: a real N x r matrix."""
    kp, n, L = prob.dims
    alpha = np.asarray(alpha, dtype=complex).ravel()
    if alpha.size != L:
        raise ValueError(f"alpha has length {alpha.size}, expected {L}")
    if bz is None:
        Z = _as_columns(Z, kp, "Z")
        bz = fft2(prob.kernel_basis.embed(Z)).reshape(Z.shape[1], L)
    g = (np.conj(alpha)[None, :] * bz).reshape(bz.shape[0], *prob.grid)
    fields = fft2(g).real * np.sqrt(L)
    return prob.image_basis.extract(fields)


def adjoint_pair(prob: LiftedProblem, alpha: np.ndarray, bz, ch):
    """(adjoint(alpha) @ H, adjoint(alpha)^T @ Z) from cached spectra,
    sharing one batched FFT; the solver's hot path."""
    L = prob.dims[2]
    r = bz.shape[0]
    g = np.conj(alpha)[None, :] * np.concatenate([ch, bz], axis=0)
    fields = fft2(g.reshape(2 * r, *prob.grid)).real * np.sqrt(L)
    return prob.kernel_basis.extract(fields[:r]), prob.image_basis.extract(fields[r:])
