"""Signal extraction, PSF synthesis, the forward blur model, and metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

SNR_CAP_DB = 300.0


class DegenerateSupportWarning(UserWarning):
    """Thresholding or extraction hit a degenerate (near-empty or
    sign-flipped) solution; results carry reduced confidence."""


@dataclass(frozen=True)
class MotionPSFSpec:
    """Linear motion blur: ``length`` pixels at ``angle`` degrees
    (counter-clockwise from the horizontal axis, in [0, 180))."""

    length: int
    angle: float

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("motion length must be at least 1 pixel")
        if not (0 <= self.angle < 180):
            raise ValueError("angle must lie in [0, 180) degrees")


@dataclass(frozen=True)
class GaussianPSFSpec:
    """Isotropic Gaussian blur truncated to a (2*radius+1)^2 box."""

    radius: int
    sigma: float

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be at least 1 pixel")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class DeblurResult:
    """Recovered kernel and image plus diagnostics from the pipeline."""

    kernel: np.ndarray
    image: np.ndarray
    singular_values: tuple[float, float]
    kernel_mask: object = None
    image_mask: object = None
    traces: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    rounds: dict = field(default_factory=dict)

    @property
    def singular_gap(self) -> float:
        s1, s2 = self.singular_values
        return s2 / s1 if s1 > 0 else 0.0


def rank_one_extract(Z: np.ndarray, H: np.ndarray):
    """Top singular triple of Z H^T without materializing it.

    QR-reduces both factors so the SVD runs on the r x r core. Returns
    (h, m, s1, gap) with h = sqrt(s1) u1, m = sqrt(s1) v1 and
    gap = s2 / s1 (0 for rank-one budgets).
    """
    Z = np.asarray(Z, dtype=float)
    H = np.asarray(H, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if H.ndim == 1:
        H = H[:, None]
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(H))):
        raise ValueError("factors must be finite")
    Qz, Rz = np.linalg.qr(Z)
    Qh, Rh = np.linalg.qr(H)
    U, s, Vt = np.linalg.svd(Rz @ Rh.T)
    if s[0] == 0:
        raise ValueError("zero solution: top singular value vanishes")
    h = np.sqrt(s[0]) * (Qz @ U[:, 0])
    m = np.sqrt(s[0]) * (Qh @ Vt[0])
    gap = float(s[1] / s[0]) if s.size > 1 else 0.0
    return h, m, float(s[0]), gap


def normalize_kernel(h: np.ndarray, mask) -> np.ndarray:
    """Resolve the scale/sign ambiguity of a recovered kernel vector.

    The sign is fixed so the sum is non-negative, negative entries are
    clamped (with a warning when they are more than 1e-3 of the peak),
    mass is rescaled to exactly 1, coefficients are scattered to the
    mask's grid positions, and the kernel is recentered by integer
    cyclic shift of its center of mass to the grid center.
    """
    h = np.asarray(h, dtype=float).copy()
    if not np.any(h):
        raise ValueError("kernel vector is identically zero")
    if h.sum() < 0:
        h = -h
    peak = h.max()
    if peak <= 0 or h.min() < -1e-3 * peak:
        warnings.warn(
            "recovered kernel has significant negative mass; clamping",
            DegenerateSupportWarning,
        )
    h = np.maximum(h, 0.0)
    total = h.sum()
    if total == 0:
        raise ValueError("kernel vanished after clamping negatives")
    h /= total

    grid_h, grid_w = mask.shape
    img = np.zeros(grid_h * grid_w)
    img[mask.indices] = h
    img = img.reshape(grid_h, grid_w)

    rows, cols = np.nonzero(img)
    weights = img[rows, cols]
    com_r = float(np.dot(rows, weights))
    com_c = float(np.dot(cols, weights))
    shift = (int(round(grid_h / 2 - com_r)), int(round(grid_w / 2 - com_c)))
    return np.roll(img, shift, axis=(0, 1))


def synth_motion_psf(spec: MotionPSFSpec, grid: tuple[int, int]) -> np.ndarray:
    """Unit-mass anti-aliased line segment, tight box anchored at the
    grid top-left corner.

    The segment is sampled at unit steps along its direction starting
    from one endpoint, and each sample is splatted bilinearly onto its
    four neighboring pixels. Axis-aligned segments therefore stay exact
    (l pixels of weight 1/l); the support box never exceeds
    ceil(l cos) x (ceil(l sin) + 1) pixels. Coordinates are snapped at
    1e-12 so angle trigonometry cannot leave dust pixels.
    """
    theta = np.radians(spec.angle)
    steps = np.arange(spec.length, dtype=float)
    px = np.round(steps * np.cos(theta), 12)  # columns
    py = np.round(-steps * np.sin(theta), 12)  # rows grow downward; angle upward
    fx = np.floor(px).astype(int)
    fy = np.floor(py).astype(int)
    ax, ay = px - fx, py - fy

    r0, c0 = fy.min(), fx.min()
    box = np.zeros((fy.max() - r0 + 2, fx.max() - c0 + 2))
    for i in range(spec.length):
        r, c = fy[i] - r0, fx[i] - c0
        box[r, c] += (1 - ay[i]) * (1 - ax[i])
        box[r, c + 1] += (1 - ay[i]) * ax[i]
        box[r + 1, c] += ay[i] * (1 - ax[i])
        box[r + 1, c + 1] += ay[i] * ax[i]
    # trim zero borders left by exact (integer) landings
    nz_r = np.flatnonzero(box.any(axis=1))
    nz_c = np.flatnonzero(box.any(axis=0))
    box = box[nz_r[0] : nz_r[-1] + 1, nz_c[0] : nz_c[-1] + 1]
    box /= box.sum()

    gh, gw = grid
    if box.shape[0] > gh or box.shape[1] > gw:
        raise ValueError(f"motion PSF box {box.shape} exceeds grid {grid}")
    out = np.zeros(grid)
    out[: box.shape[0], : box.shape[1]] = box
    return out


def synth_gaussian_psf(spec: GaussianPSFSpec, grid: tuple[int, int]) -> np.ndarray:
    """Truncated isotropic Gaussian on a (2r+1)^2 box, unit mass, box
    anchored at the grid top-left corner."""
    size = 2 * spec.radius + 1
    gh, gw = grid
    if size > gh or size > gw:
        raise ValueError(f"gaussian PSF box {size}x{size} exceeds grid {grid}")
    offsets = np.arange(size) - spec.radius
    rr, cc = np.meshgrid(offsets, offsets, indexing="ij")
    box = np.exp(-(rr**2 + cc**2) / (2.0 * spec.sigma**2))
    box /= box.sum()
    out = np.zeros(grid)
    out[:size, :size] = box
    return out


def blur(
    x: np.ndarray,
    k: np.ndarray,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Circular convolution of image and kernel plus optional white
    Gaussian noise. ``rng`` may be a Generator or a seed."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    if x.shape != k.shape:
        raise ValueError(f"image {x.shape} and kernel {k.shape} grids differ")
    y = np.fft.ifft2(np.fft.fft2(x) * np.fft.fft2(k)).real
    if noise_sigma > 0:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        y = y + rng.normal(0.0, noise_sigma, size=y.shape)
    return y


def snr(x: np.ndarray, x_rec: np.ndarray) -> float:
    """Reference energy over error energy in dB, capped at 300."""
    x = np.asarray(x, dtype=float)
    x_rec = np.asarray(x_rec, dtype=float)
    if x.shape != x_rec.shape:
        raise ValueError("images must share dimensions")
    ref = np.sum(x * x)
    if ref == 0:
        raise ValueError("reference image is identically zero")
    err = np.sum((x - x_rec) ** 2)
    if err == 0:
        return SNR_CAP_DB
    return float(min(10.0 * np.log10(ref / err), SNR_CAP_DB))


def isnr(y: np.ndarray, x: np.ndarray, x_rec: np.ndarray) -> float:
    """Improvement over the blurred observation:
    10 log10(|y - x|^2 / |x_rec - x|^2)."""
    y, x, x_rec = (np.asarray(a, dtype=float) for a in (y, x, x_rec))
    if not (y.shape == x.shape == x_rec.shape):
        raise ValueError("images must share dimensions")
    num = np.sum((y - x) ** 2)
    if num == 0:
        raise ValueError("observation equals the reference; improvement undefined")
    den = np.sum((x_rec - x) ** 2)
    if den == 0:
        return SNR_CAP_DB
    return float(10.0 * np.log10(num / den))


def norm_nuclear(X: np.ndarray) -> float:
    return float(np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False).sum())


def norm_21(X: np.ndarray) -> float:
    """Sum of row 2-norms."""
    return float(np.linalg.norm(X, axis=1).sum())


def norm_12(X: np.ndarray) -> float:
    """Sum of column 2-norms."""
    return float(np.linalg.norm(X, axis=0).sum())


def norm_2inf(X: np.ndarray) -> float:
    """Maximum row 2-norm (dual to the sum of row norms)."""
    return float(np.linalg.norm(X, axis=1).max())


def write_psf_text(kernel: np.ndarray) -> str:
    """Kernel grid as text: ``psf <h> <w>`` then one row per line."""
    kernel = np.asarray(kernel, dtype=float)
    lines = [f"psf {kernel.shape[0]} {kernel.shape[1]}"]
    for row in kernel:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def read_psf_text(text: str) -> np.ndarray:
    lines = [ln for ln in text.strip().split("\n") if ln.strip()]
    head = lines[0].split()
    if len(head) != 3 or head[0] != "psf":
        raise ValueError("not a psf grid file")
    h, w = int(head[1]), int(head[2])
    rows = [np.array([float(v) for v in ln.split()]) for ln in lines[1:]]
    out = np.vstack(rows)
    if out.shape != (h, w):
        raise ValueError(f"psf grid shape {out.shape} does not match header {(h, w)}")
    return out
