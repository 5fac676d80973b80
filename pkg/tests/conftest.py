"""Shared builders for synthetic problem instances."""

import numpy as np

from rcdeblur.lifted_op import LiftedProblem, apply
from rcdeblur.transforms import ImageBasis, KernelBasis, ifft2


def random_bases(rng, grid=(8, 8), kp=3, n=8):
    L = grid[0] * grid[1]
    depth = int(np.log2(min(grid)))
    kb = KernelBasis(rng.choice(L, size=kp, replace=False), grid)
    ib = ImageBasis(rng.choice(L, size=n, replace=False), grid, depth)
    return kb, ib


def planted_instance(rng, grid=(8, 8), kp=3, n=8, lam=0.1, h=None, m=None):
    """Rank-one ground truth X0 = h m^T observed through the lifted map.

    Returns (problem, X0, blurred_coeffs) where blurred_coeffs are the
    image-basis coefficients of the observation, the solver's standard
    starting point.
    """
    kb, ib = random_bases(rng, grid=grid, kp=kp, n=n)
    if h is None:
        h = rng.standard_normal(kp)
    if m is None:
        m = rng.standard_normal(n)
    probe = LiftedProblem(kb, ib, np.zeros(grid[0] * grid[1], dtype=complex), lam)
    y_hat = apply(probe, h, m)
    prob = LiftedProblem(kb, ib, y_hat, lam)
    y_img = ifft2(y_hat.reshape(grid))
    blurred_coeffs = ib.extract(y_img)
    return prob, np.outer(h, m), blurred_coeffs
