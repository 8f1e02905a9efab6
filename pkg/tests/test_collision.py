"""Collision operator: energy-delta quadrature, integrand algebra, assembly.

The integrand functions are checked against monomial-by-monomial expansions
(a genuinely independent evaluation path), the root tables against dense-scan
bracketing and the analytic nearest-neighbor branch set, and the assembled
operator against its exactly known kernels (constant fields, thermal and
nonthermal stationary states), conservation laws, and the mollified mode.
"""

import numpy as np
import pytest

from bosekin.collision import (
    CollisionConfig,
    DegenerateLineError,
    build_or_load_quadrature,
    build_quadrature,
    eval_A_quad,
    eval_A_tr,
    eval_C,
    eval_Cc,
    eval_Cd,
    eval_gain_term,
    load_quadrature,
    quadrature_cache_key,
    resolve_energy_delta,
    save_quadrature,
)
from bosekin.grid import (
    BrillouinGrid,
    Dispersion,
    PairPotential,
    WignerField,
    build_initial_state,
    hs_norm,
    wrap_torus,
)
from bosekin.observables import charges
from bosekin.stationary import build_be_state, solve_nonthermal, solve_thermal

from conftest import random_psd, random_smooth_field, random_special_unitary


def expand_product(*factors):
    """Multiply out a product of (c*I + M) factors monomial by monomial.

    Each factor is a pair (c, M) standing for c*I + M; the full product is
    accumulated as the sum over all 2^n choices, giving an evaluation path
    independent of the packaged integrand implementations.
    """
    d = factors[0][1].shape[0]
    total = np.zeros((d, d), dtype=complex)
    n = len(factors)
    for mask in range(2 ** n):
        term = np.eye(d, dtype=complex)
        coeff = 1.0
        for i, (c, m) in enumerate(factors):
            if mask >> i & 1:
                term = term @ m
            else:
                coeff *= c
        total += coeff * term
    return total


def a_quad_oracle(w1, w2, w3, w4, v23, v34):
    gain = expand_product((1.0, w1), (0.0, w2), (1.0, w3), (0.0, w4))
    gain_adj = expand_product((0.0, w4), (1.0, w3), (0.0, w2), (1.0, w1))
    loss = expand_product((0.0, w1), (1.0, w2), (0.0, w3), (1.0, w4))
    loss_adj = expand_product((1.0, w4), (0.0, w3), (1.0, w2), (0.0, w1))
    return v23 * v34 * (gain + gain_adj - loss - loss_adj)


def a_tr_oracle(w1, w2, w3, w4, v34):
    anti_gain = expand_product((1.0, w1), (0.0, w2)) + expand_product((0.0, w2), (1.0, w1))
    anti_loss = expand_product((0.0, w1), (1.0, w2)) + expand_product((1.0, w2), (0.0, w1))
    tr_gain = np.trace(expand_product((1.0, w3), (0.0, w4)))
    tr_loss = np.trace(expand_product((0.0, w3), (1.0, w4)))
    return v34**2 * (anti_gain * tr_gain - anti_loss * tr_loss)


class TestResolveEnergyDelta:
    def test_nearest_neighbor_analytic_roots(self, grid32, disp0):
        roots = resolve_energy_delta(disp0, grid32, 0.1, 0.3)
        k3 = sorted(k for k, _ in roots)
        np.testing.assert_allclose(k3, [0.3, 0.4], atol=1e-12)

    def test_nearest_neighbor_degenerate_line(self, grid32, disp0):
        with pytest.raises(DegenerateLineError):
            resolve_energy_delta(disp0, grid32, 0.2, 0.2)

    def test_equal_momenta_degenerate_for_any_eta(self, grid32, disp_half):
        # k2 = k1 forces k4 = k3, so the energy mismatch vanishes identically
        with pytest.raises(DegenerateLineError):
            resolve_energy_delta(disp_half, grid32, 0.2, 0.2)

    def test_roots_are_on_shell(self, grid32, disp_half):
        k1, k2 = 0.15, 0.35
        roots = resolve_energy_delta(disp_half, grid32, k1, k2)
        assert roots
        for k3, weight in roots:
            k4 = wrap_torus(k1 - k2 + k3)
            g = disp_half.omega(k1) - disp_half.omega(k2) + disp_half.omega(k3) - disp_half.omega(k4)
            assert abs(g) < 1e-12
            gprime = disp_half.omega_prime(k3) - disp_half.omega_prime(k4)
            assert weight == pytest.approx(1.0 / abs(gprime), rel=1e-9)

    def test_matches_dense_scan(self, grid32, disp_half):
        # brute-force bracketing at 10^6 samples finds the same root set
        k1, k2 = 0.15, 0.35
        roots = sorted(k for k, _ in resolve_energy_delta(disp_half, grid32, k1, k2))
        kk = np.linspace(-0.5, 0.5, 1_000_001)
        g = disp_half.omega(k1) - disp_half.omega(k2) + disp_half.omega(kk) - disp_half.omega(
            wrap_torus(k1 - k2 + kk)
        )
        sign = np.sign(g)
        nz = sign != 0
        flips = np.flatnonzero(np.diff(sign[nz]) != 0)
        brackets = np.flatnonzero(nz)[flips]
        # periodic wrap: the last-to-first segment is covered because the scan
        # includes both endpoints of the zone (same point mod 1)
        assert len(brackets) == len(roots)
        for lo in brackets:
            inside = [r for r in roots if kk[lo] - 1e-6 <= r <= kk[lo + 2] + 1e-6]
            assert len(inside) == 1

    def test_weights_respect_g_min_cut(self, grid32, disp_half):
        roots = resolve_energy_delta(disp_half, grid32, 0.15, 0.35, g_min=1e-6)
        for _, w in roots:
            assert w <= 1e6

    def test_eta_zero_branch_structure_generic_pairs(self, grid32, disp0):
        rng = np.random.default_rng(71)
        for _ in range(20):
            j1, j2 = rng.integers(0, 32, size=2)
            k1, k2 = grid32.points[j1], grid32.points[j2]
            if j1 == j2:
                continue
            roots = sorted(wrap_torus(np.array([k for k, _ in
                           resolve_energy_delta(disp0, grid32, k1, k2)])))
            expected = sorted(wrap_torus(np.array([k2, 0.5 - k1])))
            if abs(expected[0] - expected[1]) < 1e-12:
                expected = expected[:1]
            np.testing.assert_allclose(roots, expected, atol=1e-12)


class TestQuadratureTable:
    def test_all_nodes_on_shell(self, grid32, disp_half, quad32_half):
        q = quad32_half
        k1 = grid32.points[q.i1]
        k2 = grid32.points[q.i2]
        k4 = wrap_torus(k1 - k2 + q.k3)
        g = disp_half.omega(k1) - disp_half.omega(k2) + disp_half.omega(q.k3) - disp_half.omega(k4)
        assert np.max(np.abs(g)) <= 1e-12

    def test_no_degenerate_rows_and_pair_symmetry(self, quad32_half):
        q = quad32_half
        assert np.all(q.i1 != q.i2)
        # the (k1,k2) <-> (k2,k1) relabeling maps the table onto itself
        pairs = {}
        for a, b in zip(q.i1.tolist(), q.i2.tolist()):
            pairs[(a, b)] = pairs.get((a, b), 0) + 1
        for (a, b), count in pairs.items():
            assert pairs.get((b, a)) == count

    def test_select_filters_small_slopes(self, quad32_half):
        q = quad32_half
        full = q.node_count(0.0)
        kept = q.node_count(1e-6)
        assert 0 < kept <= full
        sel = q.select(1e-6)
        assert np.all(np.abs(sel.gprime) >= 1e-6)

    def test_deterministic_rebuild(self, grid32, disp_half, quad32_half):
        q2 = build_quadrature(grid32, disp_half)
        np.testing.assert_array_equal(q2.i1, quad32_half.i1)
        np.testing.assert_array_equal(q2.i2, quad32_half.i2)
        np.testing.assert_array_equal(q2.k3, quad32_half.k3)
        np.testing.assert_array_equal(q2.gprime, quad32_half.gprime)


class TestQuadratureCache:
    def test_save_load_round_trip(self, tmp_path, grid32, disp_half, quad32_half):
        path = tmp_path / "table.quad"
        save_quadrature(quad32_half, path)
        back = load_quadrature(path)
        assert back.n_points == quad32_half.n_points
        assert back.eta == quad32_half.eta
        assert back.tol_root == quad32_half.tol_root
        assert back.n_dropped_tol == quad32_half.n_dropped_tol
        np.testing.assert_array_equal(back.i1, quad32_half.i1)
        np.testing.assert_array_equal(back.i2, quad32_half.i2)
        np.testing.assert_array_equal(back.k3, quad32_half.k3)
        np.testing.assert_array_equal(back.gprime, quad32_half.gprime)

    def test_cache_key_format(self):
        key = quadrature_cache_key(64, 0.5, 1e-12)
        assert len(key) == 16
        int(key, 16)  # hex digest prefix
        assert key != quadrature_cache_key(64, 0.02, 1e-12)
        assert key != quadrature_cache_key(128, 0.5, 1e-12)
        assert key == quadrature_cache_key(64, 0.5, 1e-12)

    def test_build_or_load_uses_cache(self, tmp_path, grid32, disp_half):
        first = build_or_load_quadrature(grid32, disp_half, cache_dir=tmp_path)
        files = list(tmp_path.glob("*"))
        assert len(files) == 1
        second = build_or_load_quadrature(grid32, disp_half, cache_dir=tmp_path)
        np.testing.assert_array_equal(first.k3, second.k3)
        np.testing.assert_array_equal(first.gprime, second.gprime)

    def test_load_rejects_corrupt_header(self, tmp_path, quad32_half):
        path = tmp_path / "table.quad"
        save_quadrature(quad32_half, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            load_quadrature(path)


class TestIntegrandAlgebra:
    def test_a_quad_constant_input_cancels(self):
        c = 0.7 * np.eye(3, dtype=complex)
        out = eval_A_quad(c, c, c, c, 1.3, 0.8)
        np.testing.assert_allclose(out, 0.0, atol=1e-14)

    def test_a_quad_exchange_branch_cancels(self):
        rng = np.random.default_rng(81)
        w1, w3 = random_psd(rng, 3), random_psd(rng, 3)
        out = eval_A_quad(w1, w1, w3, w3, 0.9, 1.1)
        np.testing.assert_allclose(out, 0.0, atol=1e-13)

    def test_a_quad_matches_monomial_expansion(self):
        rng = np.random.default_rng(82)
        for _ in range(5):
            w = [random_psd(rng, 3) for _ in range(4)]
            v23, v34 = rng.uniform(0.2, 2.0, size=2)
            out = eval_A_quad(*w, v23, v34)
            np.testing.assert_allclose(out, a_quad_oracle(*w, v23, v34), atol=1e-12)
            np.testing.assert_allclose(out, out.conj().T, atol=1e-13)

    def test_a_tr_equal_inputs_cancel(self):
        rng = np.random.default_rng(83)
        w = random_psd(rng, 3)
        out = eval_A_tr(w, w, w, w, 1.4)
        np.testing.assert_allclose(out, 0.0, atol=1e-13)

    def test_a_tr_zero_pair(self):
        rng = np.random.default_rng(84)
        w1, w2 = random_psd(rng, 3), random_psd(rng, 3)
        z = np.zeros((3, 3), dtype=complex)
        out = eval_A_tr(w1, w2, z, z, 1.4)
        np.testing.assert_allclose(out, 0.0, atol=1e-14)

    def test_a_tr_matches_monomial_expansion_and_trace_identity(self):
        rng = np.random.default_rng(85)
        for _ in range(5):
            w = [random_psd(rng, 3) for _ in range(4)]
            v34 = rng.uniform(0.2, 2.0)
            out = eval_A_tr(*w, v34)
            np.testing.assert_allclose(out, a_tr_oracle(*w, v34), atol=1e-12)
            wt = [np.eye(3) + x for x in w]
            expected_tr = v34**2 * 2 * (
                np.trace(wt[0] @ w[1]) * np.trace(wt[2] @ w[3])
                - np.trace(w[0] @ wt[1]) * np.trace(w[2] @ wt[3])
            )
            assert np.trace(out) == pytest.approx(expected_tr, rel=1e-12)

    def test_gain_vanishes_without_sources(self):
        rng = np.random.default_rng(86)
        w1 = random_psd(rng, 3)
        z = np.zeros((3, 3), dtype=complex)
        np.testing.assert_allclose(eval_gain_term(w1, z, z, z, 1.0, 1.0), 0.0, atol=1e-15)

    def test_gain_scalar_formula(self):
        l2, l3, l4 = 0.4, 0.9, 1.7
        v23, v34 = 0.7, 1.3
        out = eval_gain_term(
            np.array([[0.3 + 0j]]), np.array([[l2 + 0j]]),
            np.array([[l3 + 0j]]), np.array([[l4 + 0j]]), v23, v34,
        )
        assert out[0, 0].real == pytest.approx(
            2 * (v23 * v34 + v34**2) * l4 * (1 + l3) * l2, rel=1e-13
        )

    def test_gain_symmetrized_pair_sum_psd(self):
        # exchange symmetrization k2 <-> k4 swaps (W2, v23) with (W4, v34);
        # the lemma guarantees the pair sum is PSD for rank-one inputs
        rng = np.random.default_rng(87)
        for _ in range(50):
            vecs = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
            w = [np.outer(v, v.conj()) for v in vecs]
            v23, v34 = 1.0, 1.0
            pair = eval_gain_term(w[0], w[1], w[2], w[3], v23, v34) + eval_gain_term(
                w[0], w[3], w[2], w[1], v34, v23
            )
            assert np.linalg.eigvalsh(pair).min() >= -1e-12


class TestPositivityLemma:
    def test_randomized_instances(self):
        # x^2 A tr[BC] + y^2 C tr[BA] - xy (ABC + CBA) is PSD for PSD A, B, C
        rng = np.random.default_rng(88)
        for _ in range(200):
            d = int(rng.integers(1, 6))
            a, b, c = (random_psd(rng, d) for _ in range(3))
            x, y = rng.normal(size=2) * 2.0
            mat = (
                x**2 * a * np.trace(b @ c).real
                + y**2 * c * np.trace(b @ a).real
                - x * y * (a @ b @ c + c @ b @ a)
            )
            assert np.linalg.eigvalsh(mat).min() >= -1e-12


class TestEvalCd:
    def test_constant_field_is_fixed_point(self, grid32, disp_half, onsite, quad32_half):
        vals = np.broadcast_to(0.8 * np.eye(3), (32, 3, 3)).copy().astype(complex)
        out = eval_Cd(WignerField(grid32, vals), disp_half, onsite, quad32_half,
                      CollisionConfig())
        assert np.max(np.abs(out)) <= 1e-13

    def test_thermal_state_residual_small(self, grid64, disp_half, onsite, quad64_half):
        eps = np.array([0.9, 0.7, 0.5])
        params = solve_thermal(grid64, disp_half, eps, 0.85 * eps.sum())
        wbe = build_be_state(grid64, params, disp_half)
        out = eval_Cd(wbe, disp_half, onsite, quad64_half, CollisionConfig())
        assert hs_norm(WignerField(grid64, out)) <= 1e-3 * hs_norm(wbe)

    def test_nonthermal_state_annihilates_nn_kernel(self, grid64, disp0, onsite, quad64_0):
        w0 = build_initial_state(grid64)
        ch = charges(w0, disp0)
        prof = solve_nonthermal(grid64, ch.h_profile, ch.eps, basis=ch.basis)
        wst = build_be_state(grid64, prof)
        out = eval_Cd(wst, disp0, onsite, quad64_0, CollisionConfig())
        # the family is an exact kernel of the discrete nearest-neighbor
        # collision sum (roots land on {k2, 1/2-k1} where detailed balance
        # holds algebraically), so only rounding remains
        assert hs_norm(WignerField(grid64, out)) <= 1e-12 * hs_norm(wst)

    def test_output_hermitian(self, grid32, disp_half, onsite, quad32_half):
        w = random_smooth_field(grid32, seed=91)
        out = eval_Cd(w, disp_half, onsite, quad32_half, CollisionConfig())
        np.testing.assert_allclose(out, np.conj(np.transpose(out, (0, 2, 1))), atol=1e-13)

    def test_mollified_mode_agrees(self, grid32, disp0, onsite, quad32_0):
        w = random_smooth_field(grid32, seed=0)
        ref = eval_Cd(w, disp0, onsite, quad32_0, CollisionConfig())
        moll = eval_Cd(
            w, disp0, onsite, None,
            CollisionConfig(mode="mollified", c_moll=1.0, moll_refine=128, moll_strip=1),
        )
        rel = hs_norm(WignerField(grid32, moll - ref)) / hs_norm(WignerField(grid32, ref))
        assert rel <= 0.05

    def test_empty_quadrature_rejected(self, grid32, disp0, onsite, quad32_0):
        w = random_smooth_field(grid32, seed=92)
        with pytest.raises(RuntimeError, match="empty"):
            eval_Cd(w, disp0, onsite, quad32_0, CollisionConfig(g_min=1e9))

    def test_nan_input_reported_with_location(self, grid32, disp0, onsite, quad32_0):
        w = random_smooth_field(grid32, seed=93)
        w.values[3, 0, 0] = np.nan
        with pytest.raises(FloatingPointError, match="k ind"):
            eval_Cd(w, disp0, onsite, quad32_0, CollisionConfig())

    def test_gain_part_psd_along_trajectory(self, grid32, disp_half, onsite, quad32_half):
        from bosekin.integrate import evolve

        w = build_initial_state(grid32)
        rec = evolve(w, 0.06, 6e-3, disp_half, onsite, quad32_half, CollisionConfig(),
                     sample_every=5)
        for state in (w, rec.final_state):
            _, gain = eval_Cd(state, disp_half, onsite, quad32_half, CollisionConfig(),
                              return_gain=True)
            assert np.linalg.eigvalsh(gain).min() >= -1e-10


class TestEvalCc:
    def test_zero_state(self, grid32, disp_half, onsite):
        w = WignerField(grid32, np.zeros((32, 3, 3), dtype=complex))
        out = eval_Cc(w, disp_half, onsite, CollisionConfig(include_vlasov=True))
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_diagonal_fixed_basis_field_vanishes(self, grid32, disp_half, onsite):
        rng = np.random.default_rng(94)
        basis = random_special_unitary(rng, 3)
        lam = 0.5 + 0.3 * np.cos(2 * np.pi * grid32.points)
        diag = np.einsum("j,ab->jab", lam, np.eye(3)) * [1.0, 0.7, 0.4]
        vals = np.einsum("ab,jbc,dc->jad", basis, diag.astype(complex), basis.conj())
        out = eval_Cc(WignerField(grid32, vals), disp_half, onsite,
                      CollisionConfig(include_vlasov=True))
        assert np.max(np.abs(out)) <= 1e-12

    def test_unitary_covariance(self, grid32, disp_half, onsite):
        rng = np.random.default_rng(95)
        w = random_smooth_field(grid32, seed=95)
        u = random_special_unitary(rng, 3)
        cfg = CollisionConfig(include_vlasov=True)
        rotated = WignerField(grid32, np.einsum("ba,jbc,cd->jad", u.conj(), w.values, u))
        lhs = eval_Cc(rotated, disp_half, onsite, cfg)
        rhs = np.einsum("ba,jbc,cd->jad", u.conj(),
                        eval_Cc(w, disp_half, onsite, cfg), u)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_output_hermitian(self, grid32, disp_half, invcos):
        w = random_smooth_field(grid32, seed=96)
        out = eval_Cc(w, disp_half, invcos, CollisionConfig(include_vlasov=True))
        np.testing.assert_allclose(out, np.conj(np.transpose(out, (0, 2, 1))), atol=1e-13)


class TestEvalC:
    def test_vlasov_flag_controls_sum(self, grid32, disp_half, onsite, quad32_half):
        w = random_smooth_field(grid32, seed=97)
        cd = eval_Cd(w, disp_half, onsite, quad32_half, CollisionConfig())
        c_plain = eval_C(w, disp_half, onsite, quad32_half, CollisionConfig())
        np.testing.assert_allclose(c_plain, cd, atol=1e-15)
        cfg_v = CollisionConfig(include_vlasov=True)
        cc = eval_Cc(w, disp_half, onsite, cfg_v)
        c_full = eval_C(w, disp_half, onsite, quad32_half, cfg_v)
        np.testing.assert_allclose(c_full, cd + cc, atol=1e-14)

    def test_thermal_state_stationary_with_vlasov(self, grid64, disp_half, onsite,
                                                  quad64_half):
        eps = np.array([0.9, 0.7, 0.5])
        params = solve_thermal(grid64, disp_half, eps, 0.85 * eps.sum())
        wbe = build_be_state(grid64, params, disp_half)
        out = eval_C(wbe, disp_half, onsite, quad64_half,
                     CollisionConfig(include_vlasov=True))
        assert hs_norm(WignerField(grid64, out)) <= 1e-3 * hs_norm(wbe)

    def test_conservation_residuals_shrink(self, grid32, grid64, disp_half, onsite,
                                           quad32_half, quad64_half):
        # same smooth function sampled on both grids; the spin residual is
        # exactly zero by the conservative node deposit (floating-point floor),
        # the energy residual converges at quadrature order
        res = {}
        for grid, quad in ((grid32, quad32_half), (grid64, quad64_half)):
            w = random_smooth_field(grid, seed=77)
            cv = eval_C(w, disp_half, onsite, quad, CollisionConfig())
            spin = float(np.linalg.norm(cv.sum(axis=0) * grid.dk))
            energy = abs(float(
                np.sum(disp_half.omega(grid.points)
                       * np.trace(cv, axis1=1, axis2=2).real) * grid.dk
            ))
            res[grid.n_points] = (spin, energy)
        assert res[32][0] <= 1e-12
        assert res[64][0] <= 1e-12
        assert res[64][1] <= res[32][1] / 4.0

    def test_unitary_covariance_full_operator(self, grid32, disp_half, onsite,
                                              quad32_half):
        rng = np.random.default_rng(98)
        w = random_smooth_field(grid32, seed=98)
        u = random_special_unitary(rng, 3)
        cfg = CollisionConfig(include_vlasov=True)
        rotated = WignerField(grid32, np.einsum("ba,jbc,cd->jad", u.conj(), w.values, u))
        lhs = eval_C(rotated, disp_half, onsite, quad32_half, cfg)
        rhs = np.einsum("ba,jbc,cd->jad", u.conj(),
                        eval_C(w, disp_half, onsite, quad32_half, cfg), u)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_thread_count_does_not_change_bits(self, grid32, disp_half, onsite,
                                               quad32_half):
        w = random_smooth_field(grid32, seed=99)
        one = eval_C(w, disp_half, onsite, quad32_half, CollisionConfig(threads=1))
        four = eval_C(w, disp_half, onsite, quad32_half, CollisionConfig(threads=4))
        np.testing.assert_array_equal(one, four)


class TestCollisionConfig:
    def test_rejects_bad_mode(self):
        with pytest.raises(ValueError):
            CollisionConfig(mode="adaptive")

    def test_rejects_nonpositive_scales(self):
        with pytest.raises(ValueError):
            CollisionConfig(g_min=0.0)
        with pytest.raises(ValueError):
            CollisionConfig(c_moll=-1.0)
        with pytest.raises(ValueError):
            CollisionConfig(tol_root=0.0)
        with pytest.raises(ValueError):
            CollisionConfig(moll_refine=0)
