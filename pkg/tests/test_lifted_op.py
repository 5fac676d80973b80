"""Lifted-operator tests against explicitly assembled dense oracles."""

import numpy as np
import pytest

from rcdeblur.lifted_op import (
    LiftedProblem,
    adjoint_times_h,
    adjoint_times_z,
    apply,
    residual,
)
from rcdeblur.transforms import ImageBasis, KernelBasis, fft2


def make_problem(rng, grid=(4, 4), kp=3, n=4, lam=0.5, y_hat=None):
    L = grid[0] * grid[1]
    depth = int(np.log2(min(grid)))
    kb = KernelBasis(rng.choice(L, size=kp, replace=False), grid)
    ib = ImageBasis(rng.choice(L, size=n, replace=False), grid, depth)
    if y_hat is None:
        y_hat = np.zeros(L, dtype=complex)
    return LiftedProblem(kb, ib, y_hat, lam)


def dense_measurement_matrices(prob):
    """A_l = sqrt(L) conj(bhat_l) chat_l^H for every frequency l, assembled
    from dense basis matrices so that apply(X)_l = Tr(A_l^H X)."""
    kp, n, L = prob.dims
    B = np.stack(
        [prob.kernel_basis.embed(e).ravel() for e in np.eye(kp)], axis=1
    )  # L x K'
    C = np.stack([prob.image_basis.embed(e).ravel() for e in np.eye(n)], axis=1)
    Bhat = fft2(B.T.reshape(kp, *prob.grid)).reshape(kp, L).T  # L x K'
    Chat = fft2(C.T.reshape(n, *prob.grid)).reshape(n, L).T
    return [
        np.sqrt(L) * np.conj(Bhat[l])[:, None] * np.conj(Chat[l])[None, :]
        for l in range(L)
    ]


def dense_apply(mats, X):
    return np.array([np.trace(A.conj().T @ X) for A in mats])


def dense_adjoint(mats, alpha):
    return np.real(sum(a * A for a, A in zip(alpha, mats)))


class TestApply:
    def test_zero_factors(self):
        rng = np.random.default_rng(0)
        prob = make_problem(rng)
        out = apply(prob, np.zeros((3, 2)), rng.standard_normal((4, 2)))
        assert np.all(out == 0)

    def test_delta_kernel_constant_modulus(self):
        # a unit pixel at the grid origin has flat unitary spectrum 1/sqrt(L)
        rng = np.random.default_rng(1)
        grid, L = (4, 4), 16
        kb = KernelBasis(np.array([0, 5]), grid)
        ib = ImageBasis(rng.choice(L, size=4, replace=False), grid, 2)
        prob = LiftedProblem(kb, ib, np.zeros(L, dtype=complex), 1.0)
        m = rng.standard_normal(4)
        out = apply(prob, np.array([1.0, 0.0]), m)
        xhat = fft2(ib.embed(m)).ravel()
        assert np.allclose(out, xhat)  # sqrt(L) * (1/sqrt(L)) * xhat

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        prob = make_problem(rng, kp=3, n=4)
        mats = dense_measurement_matrices(prob)
        Z = rng.standard_normal((3, 2))
        H = rng.standard_normal((4, 2))
        got = apply(prob, Z, H)
        want = dense_apply(mats, Z @ H.T)
        assert np.max(np.abs(got - want)) <= 1e-9 * max(np.max(np.abs(want)), 1)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        prob = make_problem(rng)
        Z1, Z2 = rng.standard_normal((2, 3, 2))
        H = rng.standard_normal((4, 2))
        assert np.allclose(
            apply(prob, Z1 + Z2, H), apply(prob, Z1, H) + apply(prob, Z2, H)
        )
        assert np.allclose(apply(prob, 2.5 * Z1, H), 2.5 * apply(prob, Z1, H))

    def test_spatial_model_equivalence(self):
        # full bases: the lifted map equals the spectrum of the circular
        # convolution of the embedded kernel and image
        rng = np.random.default_rng(4)
        grid, L = (8, 8), 64
        kb = KernelBasis(np.arange(L), grid)
        ib = ImageBasis.full(grid, 3)
        prob = LiftedProblem(kb, ib, np.zeros(L, dtype=complex), 1.0)
        h = rng.standard_normal(L)
        m = rng.standard_normal(L)
        out = apply(prob, h, m)
        k_img = kb.embed(h)
        x_img = ib.embed(m)
        conv = np.zeros(grid)
        for dr in range(8):
            for dc in range(8):
                conv += k_img[dr, dc] * np.roll(x_img, (dr, dc), axis=(0, 1))
        want = fft2(conv).ravel()
        assert np.max(np.abs(out - want)) <= 1e-9 * np.max(np.abs(want))

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(5)
        prob = make_problem(rng)
        with pytest.raises(ValueError):
            apply(prob, np.ones((2, 1)), np.ones((4, 1)))


class TestAdjoint:
    def test_zero_alpha(self):
        rng = np.random.default_rng(6)
        prob = make_problem(rng)
        out = adjoint_times_h(prob, np.zeros(16), rng.standard_normal((4, 2)))
        assert np.all(out == 0)
        out = adjoint_times_z(prob, np.zeros(16), rng.standard_normal((3, 2)))
        assert np.all(out == 0)

    def test_adjoint_identity_many_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            grid = (int(rng.choice([2, 4, 8])), int(rng.choice([2, 4, 8])))
            L = grid[0] * grid[1]
            kp = int(rng.integers(1, min(9, L + 1)))
            n = int(rng.integers(1, min(9, L + 1)))
            r = int(rng.integers(1, 4))
            prob = make_problem(rng, grid=grid, kp=kp, n=n)
            Z = rng.standard_normal((kp, r))
            H = rng.standard_normal((n, r))
            alpha = rng.standard_normal(L) + 1j * rng.standard_normal(L)
            lhs = np.real(np.vdot(alpha, apply(prob, Z, H)))
            # <Z H^T, M>_F == <Z, M H>_F
            rhs = np.sum(Z * adjoint_times_h(prob, alpha, H))
            scale = np.linalg.norm(Z @ H.T) * np.linalg.norm(alpha)
            assert abs(lhs - rhs) <= 1e-10 * max(scale, 1)

    def test_adjoint_matches_dense(self):
        rng = np.random.default_rng(8)
        prob = make_problem(rng, kp=3, n=4)
        mats = dense_measurement_matrices(prob)
        alpha = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        dense = dense_adjoint(mats, alpha)
        H = rng.standard_normal((4, 2))
        Z = rng.standard_normal((3, 2))
        assert np.allclose(adjoint_times_h(prob, alpha, H), dense @ H, atol=1e-10)
        assert np.allclose(adjoint_times_z(prob, alpha, Z), dense.T @ Z, atol=1e-10)

    def test_single_frequency_rank_one(self):
        rng = np.random.default_rng(9)
        prob = make_problem(rng, kp=3, n=4)
        mats = dense_measurement_matrices(prob)
        for l in [0, 7, 13]:
            alpha = np.zeros(16, dtype=complex)
            alpha[l] = 1.0
            H = rng.standard_normal((4, 2))
            want = np.real(mats[l]) @ H
            assert np.allclose(adjoint_times_h(prob, alpha, H), want, atol=1e-10)

    def test_pairing_with_factored_product(self):
        rng = np.random.default_rng(10)
        prob = make_problem(rng, kp=5, n=6)
        Z = rng.standard_normal((5, 3))
        H = rng.standard_normal((6, 3))
        alpha = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        lhs = np.real(np.vdot(alpha, apply(prob, Z, H)))
        rhs_h = np.sum(Z * adjoint_times_h(prob, alpha, H))
        rhs_z = np.sum(H * adjoint_times_z(prob, alpha, Z))
        scale = max(np.linalg.norm(Z @ H.T) * np.linalg.norm(alpha), 1)
        assert abs(lhs - rhs_h) <= 1e-10 * scale
        assert abs(lhs - rhs_z) <= 1e-10 * scale


class TestResidual:
    def test_exact_fit_gives_zero(self):
        rng = np.random.default_rng(11)
        prob0 = make_problem(rng, kp=3, n=4)
        Z = rng.standard_normal((3, 1))
        H = rng.standard_normal((4, 1))
        y_hat = apply(prob0, Z, H)
        prob = LiftedProblem(prob0.kernel_basis, prob0.image_basis, y_hat, prob0.lam)
        assert np.all(residual(prob, Z, H) == 0)

    def test_zero_factors_give_minus_y(self):
        rng = np.random.default_rng(12)
        y_hat = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        prob = make_problem(rng, y_hat=y_hat)
        res = residual(prob, np.zeros((3, 2)), np.zeros((4, 2)))
        assert np.allclose(res, -y_hat)

    def test_componentwise(self):
        rng = np.random.default_rng(13)
        y_hat = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        prob = make_problem(rng, y_hat=y_hat)
        Z = rng.standard_normal((3, 2))
        H = rng.standard_normal((4, 2))
        assert np.allclose(residual(prob, Z, H), apply(prob, Z, H) - y_hat)
