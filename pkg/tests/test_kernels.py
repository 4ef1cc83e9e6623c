"""Pointwise constitutive kernels against closed forms and brute-force oracles.

The finite-difference oracles freeze the defining relations: stress is
the strain derivative of the degraded energy, and the tangent is the
strain derivative of the stress.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bonefrac import kernels
from bonefrac import _kernels_numpy as impl_np
from bonefrac import _kernels_numba as impl_nb
from conftest import random_rotations, random_symmetric

VOIGT_IJ = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)]


def energy_density(eps, g, lam, mu):
    """Independent oracle: g * psi+ + psi- via a direct eigensolve."""
    w = np.linalg.eigvalsh(eps)
    wp = np.maximum(w, 0.0)
    wn = np.minimum(w, 0.0)
    trp = max(w.sum(), 0.0)
    trn = min(w.sum(), 0.0)
    psi_p = 0.5 * lam * trp**2 + mu * (wp**2).sum()
    psi_n = 0.5 * lam * trn**2 + mu * (wn**2).sum()
    return g * psi_p + psi_n


def well_separated(rng, n, scale=1e-2, gap=1e-3):
    """Random symmetric strains with separated eigenvalues and nonzero trace."""
    out = []
    while len(out) < n:
        eps = random_symmetric(rng, 1, scale)[0]
        w = np.linalg.eigvalsh(eps)
        if np.diff(w).min() > gap * scale and abs(w.sum()) > gap * scale:
            out.append(eps)
    return np.array(out)


class TestMacaulay:
    @pytest.mark.parametrize("x,expected", [(3.0, 3.0), (-3.0, 0.0), (0.0, 0.0)])
    def test_examples(self, x, expected):
        assert kernels.macaulay(x) == expected

    @given(st.floats(min_value=-1e6, max_value=1e6))
    @settings(max_examples=100, deadline=None)
    def test_positive_part(self, x):
        m = kernels.macaulay(x)
        assert m >= 0.0
        assert m == max(x, 0.0)


class TestSpectralSplit:
    def test_diagonal_case(self):
        eps = np.diag([2.0, -1.0, 0.0])
        ep, en = kernels.spectral_split(eps)
        np.testing.assert_allclose(ep, np.diag([2.0, 0.0, 0.0]), atol=1e-14)
        np.testing.assert_allclose(en, np.diag([0.0, -1.0, 0.0]), atol=1e-14)

    def test_pure_tension(self):
        rng = np.random.default_rng(0)
        q = random_rotations(rng, 1)[0]
        eps = q @ np.diag([1e-3, 2e-3, 5e-4]) @ q.T
        ep, en = kernels.spectral_split(eps)
        np.testing.assert_allclose(ep, eps, atol=1e-12)
        np.testing.assert_allclose(en, 0.0, atol=1e-12)

    def test_reconstruction_and_orthogonality(self):
        rng = np.random.default_rng(1)
        for eps in random_symmetric(rng, 200):
            ep, en = kernels.spectral_split(eps)
            np.testing.assert_allclose(ep + en, eps, atol=1e-12)
            # eps+ eps- = 0 (complementary eigenspaces)
            np.testing.assert_allclose(ep @ en, 0.0, atol=1e-12)

    def test_rotation_equivariance_against_bruteforce(self):
        # oracle: independent numpy eigensolve on the rotated tensor
        rng = np.random.default_rng(2)
        eps_all = random_symmetric(rng, 100)
        rots = random_rotations(rng, 100)
        for eps, q in zip(eps_all, rots):
            ep, en = kernels.spectral_split(eps)
            ep_rot, en_rot = kernels.spectral_split(q @ eps @ q.T)
            np.testing.assert_allclose(ep_rot, q @ ep @ q.T, atol=1e-9)
            np.testing.assert_allclose(en_rot, q @ en @ q.T, atol=1e-9)

    def test_semidefiniteness(self):
        rng = np.random.default_rng(3)
        for eps in random_symmetric(rng, 100):
            ep, en = kernels.spectral_split(eps)
            assert np.linalg.eigvalsh(ep).min() >= -1e-14
            assert np.linalg.eigvalsh(en).max() <= 1e-14

    def test_asymmetric_rejected(self):
        eps = np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(kernels.KernelError, match="symmetric"):
            kernels.spectral_split(eps)


class TestEnergySplit:
    def test_uniaxial_tension(self):
        lam, mu = 2.0, 1.5
        e = 1e-3
        psi_p, psi_n = kernels.energy_split(np.diag([e, 0, 0]), lam, mu)
        assert psi_p == pytest.approx((lam / 2) * e**2 + mu * e**2, rel=1e-12)
        assert psi_n == 0.0

    def test_uniaxial_compression(self):
        lam, mu = 2.0, 1.5
        e = 1e-3
        psi_p, psi_n = kernels.energy_split(np.diag([-e, 0, 0]), lam, mu)
        assert psi_p == 0.0
        assert psi_n == pytest.approx((lam / 2) * e**2 + mu * e**2, rel=1e-12)

    def test_split_sums_to_full_energy(self):
        # independent eigensolve oracle: the trace enters through its own
        # positive/negative part, so the two halves always recompose the
        # full isotropic energy
        rng = np.random.default_rng(4)
        lam, mu = 7.0, 3.0
        for eps in random_symmetric(rng, 200):
            psi_p, psi_n = kernels.energy_split(eps, lam, mu)
            w = np.linalg.eigvalsh(eps)
            full = 0.5 * lam * w.sum() ** 2 + mu * (w**2).sum()
            assert psi_p >= 0.0 and psi_n >= 0.0
            assert psi_p + psi_n == pytest.approx(full, rel=1e-10)

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(5)
        eps = random_symmetric(rng, 1)[0]
        p1 = kernels.energy_split(eps, 2.0, 1.0)
        p2 = kernels.energy_split(3.0 * eps, 2.0, 1.0)
        assert p2[0] == pytest.approx(9.0 * p1[0], rel=1e-12)
        assert p2[1] == pytest.approx(9.0 * p1[1], rel=1e-12)


class TestDegradation:
    @pytest.mark.parametrize("s,k,expected", [
        (0.0, 1e-8, 1.0 + 1e-8),
        (1.0, 1e-8, 1e-8),
        (0.5, 0.0, 0.25),
    ])
    def test_examples(self, s, k, expected):
        assert kernels.degradation(s, k) == pytest.approx(expected, rel=0, abs=1e-15)

    def test_monotone_decreasing(self):
        ss = np.linspace(0.0, 1.0, 33)
        gs = [kernels.degradation(s, 1e-8) for s in ss]
        assert all(b < a for a, b in zip(gs, gs[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(kernels.KernelError):
            kernels.degradation(1.1, 0.0)
        with pytest.raises(kernels.KernelError):
            kernels.degradation(-0.1, 0.0)


class TestStress:
    def test_zero_strain(self):
        for s in (0.0, 0.5, 1.0):
            sig = kernels.stress(np.zeros((3, 3)), s, 5.0, 3.0, 1e-8)
            np.testing.assert_allclose(sig, 0.0, atol=0.0)

    def test_compression_not_degraded(self):
        rng = np.random.default_rng(6)
        q = random_rotations(rng, 1)[0]
        eps = q @ np.diag([-1e-3, -2e-3, -5e-4]) @ q.T
        lam, mu = 9.0, 4.0
        sig_damaged = kernels.stress(eps, 1.0, lam, mu, 0.0)
        sig_virgin = lam * np.trace(eps) * np.eye(3) + 2 * mu * eps
        np.testing.assert_allclose(sig_damaged, sig_virgin, atol=1e-14)

    def test_undamaged_equals_isotropic(self):
        rng = np.random.default_rng(7)
        lam, mu = 11.0, 6.0
        for eps in random_symmetric(rng, 50):
            sig = kernels.stress(eps, 0.0, lam, mu, 0.0)
            iso = lam * np.trace(eps) * np.eye(3) + 2 * mu * eps
            np.testing.assert_allclose(sig, iso, atol=1e-12)

    def test_matches_energy_finite_difference(self):
        # oracle: central differences of g(s) psi+ + psi- in each strain
        # component, step 1e-6, away from repeated eigenvalues
        rng = np.random.default_rng(8)
        lam, mu, s, k = 8.0e4, 4.0e4, 0.37, 1e-8
        g = kernels.degradation(s, k)
        h = 1e-6
        for eps in well_separated(rng, 60):
            sig = kernels.stress(eps, s, lam, mu, k)
            scale = np.abs(sig).max()
            for (i, j) in VOIGT_IJ:
                ep = eps.copy()
                ep[i, j] += h
                ep[j, i] = ep[i, j]
                em = eps.copy()
                em[i, j] -= h
                em[j, i] = em[i, j]
                d = (energy_density(ep, g, lam, mu) - energy_density(em, g, lam, mu)) / (2 * h)
                if i != j:
                    d /= 2.0  # symmetric perturbation hits both off-diagonal slots
                assert d == pytest.approx(sig[i, j], abs=1e-4 * max(scale, 1.0))

    def test_frame_indifference(self):
        rng = np.random.default_rng(9)
        lam, mu, s, k = 3.0, 2.0, 0.2, 1e-8
        eps_all = random_symmetric(rng, 50)
        rots = random_rotations(rng, 50)
        for eps, q in zip(eps_all, rots):
            a = kernels.stress(q @ eps @ q.T, s, lam, mu, k)
            b = q @ kernels.stress(eps, s, lam, mu, k) @ q.T
            np.testing.assert_allclose(a, b, atol=1e-9 * max(1.0, np.abs(b).max()))


class TestConsistentTangent:
    def test_all_tension_is_classical_elasticity(self):
        lam, mu = 7.0e4, 3.0e4
        eps = np.diag([2e-3, 1e-3, 3e-3])
        dmat = kernels.consistent_tangent(eps, 0.0, lam, mu, 0.0)
        expected = np.zeros((6, 6))
        expected[:3, :3] = lam
        expected[0, 0] = expected[1, 1] = expected[2, 2] = lam + 2 * mu
        expected[3, 3] = expected[4, 4] = expected[5, 5] = mu
        np.testing.assert_allclose(dmat, expected, rtol=1e-10)

    def test_all_compression_independent_of_damage(self):
        lam, mu = 7.0e4, 3.0e4
        eps = np.diag([-2e-3, -1e-3, -3e-3])
        d0 = kernels.consistent_tangent(eps, 0.0, lam, mu, 0.0)
        d1 = kernels.consistent_tangent(eps, 0.9, lam, mu, 0.0)
        np.testing.assert_allclose(d0, d1, atol=1e-12)

    def test_matches_stress_finite_difference(self):
        # oracle: central differences of the stress in each strain component
        rng = np.random.default_rng(10)
        lam, mu, s, k = 8.0e4, 4.0e4, 0.41, 1e-8
        h = 1e-7
        for eps in well_separated(rng, 30):
            dmat = kernels.consistent_tangent(eps, s, lam, mu, k)
            scale = np.abs(dmat).max()
            fd = np.zeros((6, 6))
            for b, (i, j) in enumerate(VOIGT_IJ):
                ep = eps.copy()
                ep[i, j] += h
                ep[j, i] = ep[i, j]
                em = eps.copy()
                em[i, j] -= h
                em[j, i] = em[i, j]
                dsig = kernels.stress(ep, s, lam, mu, k) - kernels.stress(em, s, lam, mu, k)
                col = np.array([dsig[a, c] for a, c in VOIGT_IJ]) / (2 * h)
                if i != j:
                    col /= 2.0
                fd[:, b] = col
            np.testing.assert_allclose(dmat, fd, atol=1e-4 * scale)

    def test_major_symmetry(self):
        rng = np.random.default_rng(11)
        for eps in random_symmetric(rng, 50):
            dmat = kernels.consistent_tangent(eps, 0.3, 5.0, 2.0, 1e-8)
            assert np.abs(dmat - dmat.T).max() <= 1e-8 * max(1.0, np.abs(dmat).max())

    def test_near_repeated_eigenvalues_finite(self):
        eps = np.diag([1e-3, 1e-3 + 1e-13, -2e-3])
        dmat = kernels.consistent_tangent(eps, 0.1, 5.0, 2.0, 1e-8)
        assert np.isfinite(dmat).all()


class TestCrackDensity:
    def test_uniform_damage(self):
        assert kernels.crack_density(0.4, [0, 0, 0], 2.0) == pytest.approx(0.16 / 4.0)

    def test_zero(self):
        assert kernels.crack_density(0.0, [0, 0, 0], 1.0) == 0.0

    def test_pure_gradient(self):
        g0 = 3.0
        assert kernels.crack_density(0.0, [g0, 0, 0], 2.0) == pytest.approx(2.0 * g0**2 / 2.0)

    def test_nonnegative(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            s = rng.uniform(0, 1)
            grad = rng.normal(size=3)
            assert kernels.crack_density(s, grad, 0.37) >= 0.0


class TestHistoryUpdate:
    @pytest.mark.parametrize("h,psi,expected", [(5.0, 3.0, 5.0), (3.0, 5.0, 5.0), (0.0, 0.0, 0.0)])
    def test_examples(self, h, psi, expected):
        assert kernels.history_update(h, psi) == expected

    @given(
        h=st.floats(min_value=0, max_value=1e9),
        psi=st.floats(min_value=0, max_value=1e9),
    )
    @settings(max_examples=100, deadline=None)
    def test_never_decreases(self, h, psi):
        out = kernels.history_update(h, psi)
        assert out >= h
        assert out >= psi


class TestBackendsAgree:
    def test_batch_outputs_match(self):
        rng = np.random.default_rng(13)
        eps = well_separated(rng, 50)
        n = eps.shape[0]
        g = rng.uniform(1e-8, 1.0, n)
        lam = rng.uniform(1e3, 2e5, n)
        mu = rng.uniform(1e3, 1e5, n)
        out_a = impl_np.batch_stress_tangent(eps, g, lam, mu)
        out_b = impl_nb.batch_stress_tangent(eps, g, lam, mu)
        for a, b in zip(out_a, out_b):
            scale = max(1.0, np.abs(a).max())
            np.testing.assert_allclose(a, b, atol=1e-9 * scale)

    def test_eigensystems_match(self):
        rng = np.random.default_rng(14)
        eps = random_symmetric(rng, 200)
        wa, va = impl_np.eigh_batch(eps)
        wb, vb = impl_nb.eigh_batch(eps)
        np.testing.assert_allclose(wa, wb, atol=1e-12)
        # identical sign convention makes eigenvectors directly comparable
        gaps = np.diff(wa, axis=1).min(axis=1)
        ok = gaps > 1e-6
        np.testing.assert_allclose(va[ok], vb[ok], atol=1e-8)

    def test_degenerate_spectra_handled(self):
        cases = np.array([
            np.zeros((3, 3)),
            np.eye(3) * 2e-3,
            np.diag([1e-3, 1e-3, -2e-3]),
            np.diag([3e-3, 0.0, 0.0]),
        ])
        ones = np.ones(len(cases))
        for impl in (impl_np, impl_nb):
            psi_p, psi_n, sig, sigp, dmat = impl.batch_stress_tangent(
                cases, ones, ones * 5.0, ones * 3.0
            )
            assert np.isfinite(sig).all()
            assert np.isfinite(dmat).all()
