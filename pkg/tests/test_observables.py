"""Conserved charges, entropy, entropy production, and decay-rate fitting.

The exactly-known cases (constant fields, single-harmonic profiles) pin the
quadrature conventions; dual-path evaluations (scipy matrix functions, direct
finite differences of the entropy along a short trajectory) validate the
eigenvalue-based fast paths.
"""

import numpy as np
import pytest
import scipy.linalg

from bosekin.collision import CollisionConfig, eval_C
from bosekin.grid import BrillouinGrid, Dispersion, WignerField, build_initial_state
from bosekin.integrate import evolve
from bosekin.observables import (
    charges,
    entropy,
    entropy_production,
    fit_decay_rate,
    offdiag_norm,
)
from bosekin.stationary import build_be_state, solve_thermal

from conftest import random_psd, random_smooth_field, random_special_unitary


def constant_field(grid, mat):
    return WignerField(grid, np.broadcast_to(mat, (grid.n_points,) + mat.shape).copy())


class TestCharges:
    def test_constant_identity_field(self, grid64, disp0):
        w = constant_field(grid64, 0.7 * np.eye(3, dtype=complex))
        ch = charges(w, disp0)
        np.testing.assert_allclose(ch.spin_matrix, 0.7 * np.eye(3), atol=1e-14)
        # mean of omega_0 over the zone is 1, and tr W = 3c
        assert ch.energy == pytest.approx(3 * 0.7, abs=1e-13)
        np.testing.assert_allclose(ch.h_profile, 0.0, atol=1e-14)
        np.testing.assert_allclose(ch.eps, 0.7, atol=1e-14)

    def test_single_harmonic_profile(self, grid64, disp0):
        # W(k) = diag(1 + cos 2pi k, 0, 0): closed-form charges, and the
        # uniform periodic quadrature is exact for low harmonics
        k = grid64.points
        vals = np.zeros((64, 3, 3), dtype=complex)
        vals[:, 0, 0] = 1.0 + np.cos(2 * np.pi * k)
        ch = charges(WignerField(grid64, vals), disp0)
        np.testing.assert_allclose(ch.h_profile, 2 * np.cos(2 * np.pi * k), atol=1e-13)
        assert ch.energy == pytest.approx(0.5, abs=1e-13)
        np.testing.assert_allclose(ch.spin_matrix, np.diag([1.0, 0.0, 0.0]), atol=1e-14)

    def test_h_profile_antisymmetry(self, grid32, disp0):
        w = random_smooth_field(grid32, seed=21)
        ch = charges(w, disp0)
        refl = np.array([grid32.reflect_index(j) for j in range(32)])
        np.testing.assert_allclose(ch.h_profile[refl], -ch.h_profile, atol=1e-13)

    def test_spin_matrix_psd_and_descending_eps(self, grid32, disp_half):
        ch = charges(random_smooth_field(grid32, seed=22), disp_half)
        assert np.min(np.linalg.eigvalsh(ch.spin_matrix)) >= -1e-12
        assert np.all(np.diff(ch.eps) <= 1e-14)
        assert np.all(ch.eps >= -1e-12)

    def test_charges_independent_of_enumeration_order(self, grid32, disp_half):
        # summing the same (k_j, W_j) pairs in a rolled order only permutes
        # the quadrature sum; all charges agree to rounding
        w = random_smooth_field(grid32, seed=23)
        ch = charges(w, disp_half)
        rolled = WignerField(grid32, np.roll(w.values, 7, axis=0))
        k_rolled = np.roll(grid32.points, 7)
        spin = rolled.values.sum(axis=0) * grid32.dk
        energy = float(
            np.sum(disp_half.omega(k_rolled) * np.trace(rolled.values, axis1=1, axis2=2).real)
            * grid32.dk
        )
        np.testing.assert_allclose(spin, ch.spin_matrix, atol=1e-13)
        assert energy == pytest.approx(ch.energy, abs=1e-13)


class TestEntropy:
    def test_zero_field(self, grid32):
        w = WignerField(grid32, np.zeros((32, 1, 1), dtype=complex))
        assert entropy(w) == 0.0

    def test_unit_occupation_scalar(self, grid32):
        w = constant_field(grid32, np.eye(1, dtype=complex))
        assert entropy(w) == pytest.approx(2 * np.log(2.0), abs=1e-13)

    def test_matches_matrix_function_path(self, grid16):
        rng = np.random.default_rng(31)
        vals = np.array([random_psd(rng, 3) + 0.05 * np.eye(3) for _ in range(16)])
        w = WignerField(grid16, vals)
        direct = 0.0
        for m in vals:
            wt = np.eye(3) + m
            direct += np.trace(
                scipy.linalg.logm(wt) @ wt - scipy.linalg.logm(m) @ m
            ).real
        direct *= grid16.dk
        assert entropy(w) == pytest.approx(direct, abs=1e-10)

    def test_rejects_cone_violations(self, grid16):
        vals = np.broadcast_to(np.diag([1.0, -0.1, 1.0]), (16, 3, 3)).copy().astype(complex)
        with pytest.raises(ValueError):
            entropy(WignerField(grid16, vals))


class TestEntropyProduction:
    def test_thermal_state_produces_nothing(self, grid64, disp_half, onsite, quad64_half):
        eps = np.array([0.8, 0.7, 0.6])
        params = solve_thermal(grid64, disp_half, eps, 0.9 * eps.sum())
        wbe = build_be_state(grid64, params, disp_half)
        coll = eval_C(wbe, disp_half, onsite, quad64_half, CollisionConfig())
        assert abs(entropy_production(wbe, coll)) <= 1e-8

    def test_nonnegative_on_random_states(self, grid32, disp_half, onsite, quad32_half):
        for seed in range(3):
            w = random_smooth_field(grid32, seed=40 + seed)
            coll = eval_C(w, disp_half, onsite, quad32_half, CollisionConfig())
            assert entropy_production(w, coll) >= -1e-8

    def test_matches_entropy_derivative(self, grid32, disp_half, onsite, quad32_half):
        # sigma(t) equals the centered difference of S(t) to O(dt^2); the
        # prefactor for this state/grid was measured near 1e2
        w0 = build_initial_state(grid32)
        dt = 1e-3
        rec = evolve(w0, 6 * dt, dt, disp_half, onsite, quad32_half, CollisionConfig(),
                     sample_every=1)
        fd = (rec.entropy[4] - rec.entropy[2]) / (2 * dt)
        assert abs(fd - rec.sigma[3]) <= 250 * dt**2

    def test_rejects_grazing_eigenvalues_without_mollify(self, grid16):
        vals = np.broadcast_to(np.diag([1.0, 0.5, 0.0]), (16, 3, 3)).copy().astype(complex)
        w = WignerField(grid16, vals)
        coll = np.zeros_like(vals)
        with pytest.raises(ValueError, match="mollify"):
            entropy_production(w, coll)
        assert entropy_production(w, coll, mollify=True) == 0.0


class TestOffdiagNorm:
    def test_diagonal_field_vanishes(self, grid32):
        rng = np.random.default_rng(51)
        basis = random_special_unitary(rng, 3)
        lam = rng.uniform(0.1, 1.0, size=(32, 3))
        vals = np.einsum("ab,jb,cb->jac", basis, lam, basis.conj())
        assert offdiag_norm(WignerField(grid32, vals), basis) <= 1e-13

    def test_matches_direct_basis_change(self, grid32):
        rng = np.random.default_rng(52)
        w = random_smooth_field(grid32, seed=52)
        basis = random_special_unitary(rng, 3)
        rotated = np.einsum("ba,jbc,cd->jad", basis.conj(), w.values, basis)
        mask = ~np.eye(3, dtype=bool)
        direct = np.sqrt(np.sum(np.abs(rotated[:, mask]) ** 2) * grid32.dk)
        assert offdiag_norm(w, basis) == pytest.approx(direct, rel=1e-12)

    def test_default_state_baseline(self, grid64, disp0):
        # regression value fixed at first implementation
        w = build_initial_state(grid64)
        ch = charges(w, disp0)
        assert offdiag_norm(w, ch.basis) == pytest.approx(0.298929673686162, rel=1e-9)


class TestFitDecayRate:
    def test_exact_exponential(self):
        t = np.linspace(0.0, 2.0, 50)
        rate, r2 = fit_decay_rate(t, np.exp(-2.0 * t))
        assert rate == pytest.approx(2.0, abs=1e-10)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_perturbed_exponential(self):
        t = np.linspace(0.0, 3.0, 80)
        rate, r2 = fit_decay_rate(t, np.exp(-t) * (1 + 0.01 * np.sin(t)))
        assert rate == pytest.approx(1.0, rel=0.02)
        assert r2 > 0.99

    def test_constant_series(self):
        t = np.linspace(0.0, 1.0, 20)
        rate, r2 = fit_decay_rate(t, np.full(20, 3.3))
        assert rate == 0.0
        assert r2 == 0.0

    def test_window_restriction(self):
        t = np.linspace(0.0, 4.0, 200)
        v = np.where(t < 2.0, np.exp(-0.5 * t), np.exp(-1.0) * np.exp(-3.0 * (t - 2.0)))
        rate, _ = fit_decay_rate(t, v, window=(2.0, 4.0))
        assert rate == pytest.approx(3.0, rel=1e-6)

    def test_rejects_nonpositive_values(self):
        t = np.linspace(0.0, 1.0, 20)
        v = np.linspace(1.0, -0.1, 20)
        with pytest.raises(ValueError):
            fit_decay_rate(t, v)

    def test_requires_min_samples(self):
        t = np.linspace(0.0, 1.0, 5)
        with pytest.raises(ValueError):
            fit_decay_rate(t, np.exp(-t))
