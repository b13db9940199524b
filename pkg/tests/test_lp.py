import copy

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nhlp.geometry import delta
from nhlp.lp import (LPError, bmo_rho_norm, carleson_check, cube_battery, fit_decay, loglinear_fit,
                     maximal_ops, maximal_ratio, paraproduct_densities, quasi_orthogonality, random_family,
                     rbmo_norm, square_function_lp, verify_decay, verify_lp_identities, verify_rbmo_square)
from nhlp.measure import Cube


@pytest.fixture(scope="module")
def dec(comb_pipe):
    return comb_pipe.decomp


@pytest.fixture(scope="module")
def bat(comb_pipe):
    return comb_pipe.battery


def l2(f, w):
    return float(np.sqrt(np.sum(w * f ** 2)))


def rbmo_oracle(lattice, f, battery):
    """Loop over every battery cube and every nested pair."""
    mu = lattice.mu
    sup = mu.sup_distances()
    stats = []
    for c, s in zip(battery.centers, battery.sides):
        m = sup[c] <= s / 2 * (1 + 1e-12)
        mass = mu.weights[m].sum()
        mean = (mu.weights[m] @ f[m]) / mass
        stats.append((mass, mean, mu.weights[m] @ np.abs(f[m] - mean)))
    osc = max(o / m for (m, _, o), d in zip(stats, battery.doubling) if d)
    trans = 0.0
    for (a, b), dl in zip(battery.pairs, battery.pair_delta):
        trans = max(trans, abs(stats[a][1] - stats[b][1]) / (1 + dl))
    return max(osc, trans)


class TestIdentities:
    def test_telescoping(self, dec):
        total = np.zeros_like(dec.I_band)
        for k in dec.ks:
            total += dec.D[k]
        assert np.max(np.abs(total - dec.S(dec.k_max))) <= 1e-10

    def test_differences_of_S(self, dec):
        for a, b in zip(dec.ks[:-1], dec.ks[1:]):
            np.testing.assert_allclose(dec.D[b], dec.S(b) - dec.S(a), atol=1e-14)

    def test_row_sums_vanish_after_first(self, dec):
        one = np.ones(dec.mu.size)
        for k in dec.ks:
            if k != dec.first_generation:
                assert np.max(np.abs(dec.D[k] @ one)) <= 1e-9

    def test_report(self, dec):
        rep = verify_lp_identities(dec)
        assert rep.passed
        assert rep.measured_constants["telescoping_residual"] <= 1e-10

    def test_self_adjoint_in_l2mu(self, dec):
        rng = np.random.default_rng(0)
        w = dec.weights
        f, g = rng.standard_normal((2, dec.mu.size))
        for k in dec.live():
            assert np.sum(w * (dec.D[k] @ f) * g) == pytest.approx(np.sum(w * f * (dec.D[k] @ g)), abs=1e-10)


class TestPhi:
    def test_certificate(self, dec):
        assert dec.I_minus_PhiN_norm <= 0.5
        assert dec.phi_curve[-1] == (dec.N, dec.I_minus_PhiN_norm)
        # every smaller N failed the certificate
        assert all(v > 0.5 for _, v in dec.phi_curve[:-1])

    def test_phi_matches_double_sum(self, dec):
        N = dec.N
        ref = np.zeros_like(dec.I_band)
        for l in dec.ks:
            for j in dec.ks:
                if abs(l - j) <= N:
                    ref += dec.D[l] @ dec.D[j]
        np.testing.assert_allclose(dec.PhiN.matrix, ref, atol=1e-12)

    def test_neumann_against_dense_solve(self, dec):
        # the series sums (I_band - Phi_N)^i, so it solves (I - I_band + Phi_N) x = I_band b
        w = dec.weights
        b = np.random.default_rng(1).standard_normal(dec.mu.size)
        x, terms = dec.phi_inverse(b, tol=1e-10)
        Pb = dec.I_band @ b
        A = np.eye(dec.mu.size) - dec.I_band + dec.PhiN.matrix
        ref = np.linalg.solve(A, Pb)
        assert l2(x - ref, w) <= 2.0 ** -terms * l2(Pb, w)
        assert terms >= np.log2(1e10)

    def test_uncertified_rejected(self, dec):
        bad = copy.copy(dec)
        bad.I_minus_PhiN_norm = 0.7
        with pytest.raises(LPError):
            bad.phi_inverse(np.ones(dec.mu.size))

    def test_decay_report(self, dec):
        rep = verify_decay(dec, r2_min=0.8)
        c = rep.measured_constants
        assert rep.passed == (c["eta_hat"] > 0 and c["r2"] >= 0.8 and c["I_minus_PhiN_norm"] <= 0.5)


class TestFits:
    @given(st.floats(-3, 3), st.floats(-5, 5))
    def test_loglinear_exact(self, b, a):
        x = np.arange(6.0)
        slope, icpt, r2 = loglinear_fit(x, 2.0 ** (a + b * x))
        assert slope == pytest.approx(b, abs=1e-9)
        assert icpt == pytest.approx(a, abs=1e-9)
        assert r2 == pytest.approx(1.0, abs=1e-9)

    def test_envelope_is_per_gap_max(self):
        rows = [(0, 0, 0, 1.0), (0, 1, 1, 0.1), (1, 2, 1, 0.5), (0, 2, 2, 0.25)]
        eta, r2, env = fit_decay(rows)
        assert env == [(0, 1.0), (1, 0.5), (2, 0.25)]
        assert eta == pytest.approx(1.0)
        assert r2 == pytest.approx(1.0)


class TestSquareFunction:
    def test_energies_oracle(self, dec):
        f = np.random.default_rng(2).standard_normal(dec.mu.size)
        ref = [np.sum(dec.weights * (dec.D[k] @ f) ** 2) for k in dec.ks]
        np.testing.assert_allclose(dec.energies(f), ref, rtol=1e-12)

    def test_p2_matches_energy(self, dec):
        f = np.random.default_rng(3).standard_normal(dec.mu.size)
        nf, ns = square_function_lp(dec, f, 2.0)
        assert nf == pytest.approx(l2(f, dec.weights))
        assert ns ** 2 == pytest.approx(dec.energies(f).sum(), rel=1e-12)

    def test_p_range(self, dec):
        with pytest.raises(LPError):
            square_function_lp(dec, np.ones(dec.mu.size), 1.0)

    def test_quasi_orth_ratios(self, dec):
        F = random_family(dec.mu, 20)
        rep = quasi_orthogonality(dec, F)
        P = dec.I_band @ F
        r = dec.energies(P).sum(axis=0) / np.einsum("nf,n->f", P ** 2, dec.weights)
        assert rep.measured_constants["r_min"] == pytest.approx(r.min(), rel=1e-12)
        assert rep.measured_constants["r_max"] == pytest.approx(r.max(), rel=1e-12)

    def test_family_prefix_stable(self, dec):
        np.testing.assert_array_equal(random_family(dec.mu, 10, seed=4), random_family(dec.mu, 30, seed=4)[:, :10])


class TestRBMO:
    def test_pair_delta_matches_geometry(self, comb_pipe, bat):
        mu = comb_pipe.mu
        idx = np.arange(0, len(bat.pairs), max(1, len(bat.pairs) // 40))
        for t in idx:
            a, b = bat.pairs[t]
            z = mu.points[bat.centers[a]]
            ref = delta(mu, Cube.standard(z, bat.sides[a]), Cube.standard(z, bat.sides[b])).value
            assert bat.pair_delta[t] == pytest.approx(ref, rel=1e-9, abs=1e-12)

    def test_against_loop_oracle(self, comb_pipe, bat):
        f = np.random.default_rng(5).standard_normal(comb_pipe.mu.size)
        assert rbmo_norm(comb_pipe.lattice, f, bat).norm == pytest.approx(rbmo_oracle(comb_pipe.lattice, f, bat),
                                                                          rel=1e-10)

    def test_constant_zero(self, comb_pipe, bat):
        assert rbmo_norm(comb_pipe.lattice, np.full(comb_pipe.mu.size, 3.0), bat).norm == pytest.approx(0, abs=1e-12)

    @given(st.floats(-5, 5), st.floats(0.1, 10))
    def test_translation_and_scaling(self, comb_pipe, c, lam):
        f = comb_pipe.g
        base = rbmo_norm(comb_pipe.lattice, f, comb_pipe.battery).norm
        assert rbmo_norm(comb_pipe.lattice, f + c, comb_pipe.battery).norm == pytest.approx(base, rel=1e-9)
        assert rbmo_norm(comb_pipe.lattice, lam * f, comb_pipe.battery).norm == pytest.approx(lam * base, rel=1e-9)

    def test_bmo_rho_below_oscillation(self, comb_pipe, bat):
        f = comb_pipe.g
        # mu(2Q) >= mu(Q) so the rho variant never exceeds the plain oscillation over all battery cubes
        r = bmo_rho_norm(comb_pipe.lattice, f, bat, rho=2.0)
        assert r.norm <= rbmo_oracle(comb_pipe.lattice, f, bat) * (1 + 1e-12) or not bat.doubling.all()

    def test_square_tail_monotone_in_N0(self, dec, bat):
        f = np.random.default_rng(6).standard_normal(dec.mu.size)
        r0 = verify_rbmo_square(dec, f, bat, N0=0).measured_constants["C"]
        r2 = verify_rbmo_square(dec, f, bat, N0=2).measured_constants["C"]
        assert r2 >= r0 - 1e-12

    def test_battery_only_doubling_by_default(self, comb_pipe):
        b = cube_battery(comb_pipe.lattice, atoms=20)
        assert b.doubling.all()
        assert np.all(b.pair_delta >= 0)


class TestCarleson:
    def test_zero_density(self, dec, bat):
        a = np.zeros((len(dec.ks), dec.mu.size))
        rep = carleson_check(dec, a, random_family(dec.mu, 5), bat)
        assert rep.measured_constants["C9"] == 0 and rep.measured_constants["ratio"] == 0

    @given(st.floats(0.01, 100), st.floats(0.01, 100))
    def test_scale_invariance(self, comb_pipe, lam, s):
        dec = comb_pipe.decomp
        a = paraproduct_densities(dec, comb_pipe.g)
        F = random_family(dec.mu, 5)
        base = carleson_check(dec, a, F, comb_pipe.battery).measured_constants["ratio"]
        scaled = carleson_check(dec, lam * a, s * F, comb_pipe.battery).measured_constants["ratio"]
        assert scaled == pytest.approx(base, rel=1e-9)

    def test_densities_definition(self, dec, comb_pipe):
        a = paraproduct_densities(dec, comb_pipe.g)
        for r, k in enumerate(dec.ks):
            np.testing.assert_allclose(a[r], (dec.D_N(k) @ comb_pipe.g) ** 2, rtol=1e-12)
            assert np.all(a[r] >= 0)


class TestMaximal:
    def test_m2_of_one_at_most_one(self, dec):
        M2, _ = maximal_ops(dec, np.ones(dec.mu.size))
        assert np.all(M2 <= 1 + 1e-12)
        assert np.all(M2 > 0)

    def test_ratio_edge_cases(self):
        assert maximal_ratio(np.array([1.0, 2.0]), np.array([0.5, 3.0])) == 1.5
        assert maximal_ratio(np.array([0.0, 1.0]), np.array([1.0, 0.0])) == np.inf

    def test_m2_homogeneous(self, dec):
        f = np.random.default_rng(7).standard_normal(dec.mu.size)
        a, sa = maximal_ops(dec, f)
        b, sb = maximal_ops(dec, -3 * f)
        np.testing.assert_allclose(b, 3 * a, rtol=1e-12)
        np.testing.assert_allclose(sb, 3 * sa, rtol=1e-12)
