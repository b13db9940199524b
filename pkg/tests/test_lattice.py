import copy
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nhlp.geometry import LevelTable, delta
from nhlp.lattice import (LatticeConfig, LatticeError, build_lattice, fit_eta, load_lattice, theoretical_sigma,
                          size_decay_ratio, verify_nesting, verify_regularity)
from nhlp.measure import Cube, generate_example


@pytest.fixture(scope="module")
def lat200():
    mu = generate_example("uniform_interval", atoms=200)
    return build_lattice(mu, LatticeConfig.calibrated(LevelTable.build(mu)))


@pytest.fixture(scope="module")
def comb_lat():
    mu = generate_example("comb", level=4)
    return build_lattice(mu, LatticeConfig.calibrated(LevelTable.build(mu)))


class TestConfig:
    def test_ordering_enforced(self):
        with pytest.raises(LatticeError):
            LatticeConfig(A=1.0, alpha1=0.5, alpha2=0.4, sigma=0.1)

    def test_room_enforced(self):
        with pytest.raises(LatticeError):
            LatticeConfig(A=1.0, alpha1=0.3, alpha2=0.5, sigma=0.1)

    def test_multipliers_at_least_four(self):
        with pytest.raises(LatticeError):
            LatticeConfig.theoretical(C0=3.0, n=1.0, multipliers=(3.0, 10.0, 10.0))

    def test_theoretical_mode_uses_multipliers(self):
        cfg = LatticeConfig.theoretical(C0=3.0, n=1.0, multipliers=(4.0, 5.0, 6.0))
        s = theoretical_sigma(3.0, 1.0, 0.0, 0.0)
        assert cfg.sigma == pytest.approx(s)
        assert cfg.alpha1 == pytest.approx(4 * s)
        assert cfg.alpha2 == pytest.approx(20 * s)
        assert cfg.A >= 120 * s

    def test_calibrated_fractions(self, lat200):
        c = lat200.config
        assert (c.sigma / c.A, c.alpha1 / c.A, c.alpha2 / c.A) == pytest.approx((0.1, 0.2, 0.4))

    def test_scaled_keeps_room(self):
        c = LatticeConfig(A=10.0, alpha1=2.0, alpha2=4.0, sigma=1.0).scaled(alpha2=2.0)
        assert c.A > c.alpha1 + c.alpha2 + 3 * c.sigma


class TestStructure:
    def test_initial_and_stopping_bands(self, lat200):
        N = lat200.mu.size
        assert np.all(lat200.classes(lat200.k_min - 5) == 0)
        assert np.all(lat200.sides("Q", lat200.k_min) == np.inf) or np.any(lat200.classes(lat200.k_min) == 0)
        assert np.all(lat200.classes(lat200.k_max + 1) == 2)
        assert lat200.classes(lat200.k_max).shape == (N,)

    def test_every_atom_eventually_stops(self, lat200):
        # discrete points always have finite delta against any cube
        assert np.all(np.isfinite(lat200.table.point_level))
        assert np.mean(lat200.classes(lat200.k_max) == 2) >= lat200.config.stop_fraction

    def test_side_monotone_and_class_order(self, comb_lat):
        for i in range(comb_lat.mu.size):
            sides = [comb_lat.sides("Q", k)[i] for k in comb_lat.ks]
            assert all(b <= a for a, b in zip(sides[:-1], sides[1:]))
            cls = [comb_lat.classes(int(k))[i] for k in comb_lat.ks]
            assert cls == sorted(cls)

    def test_transit_levels_near_kA(self, lat200):
        # achieved delta against the whole space is within the grid granularity of kA
        A = lat200.config.A
        for k in lat200.transit_generations():
            tr = lat200.classes(k) == 1
            lv = lat200.levels("Q", k)[tr]
            assert np.median(np.abs(lv - k * A)) <= 0.5 * A

    def test_levels_are_delta_to_whole(self, comb_lat):
        k = comb_lat.transit_generations()[0]
        i = int(np.flatnonzero(comb_lat.classes(k) == 1)[0])
        Q = comb_lat.cube("Q", i, k)
        assert comb_lat.levels("Q", k)[i] == pytest.approx(delta(comb_lat.mu, Q, Cube.whole()).value, rel=1e-12)

    def test_size_decay_for_large_A(self):
        mu = generate_example("uniform_interval", atoms=1000)
        lat = build_lattice(mu, LatticeConfig(A=6.0, alpha1=1.2, alpha2=2.4, sigma=0.6))
        assert len(lat.transit_generations()) >= 2
        assert size_decay_ratio(lat) <= 0.1


class TestChecks:
    def test_nesting_report_consistent(self, lat200):
        rep = verify_nesting(lat200)
        c = rep.measured_constants
        assert rep.passed == (c["violating_entries"] == 0)
        assert c["transit_entries"] == sum(int(np.sum(lat200.classes(k) == 1)) for k in lat200.transit_generations())
        # the primary chain Q in Q1 in ... in Q3 holds exactly
        for link in ("Q<=Q1", "Q1<=Q1hat", "Q1hat<=Q2", "Q2<=Q2hat", "Q2hat<=Q3"):
            assert c["violations_by_link"][link] == 0

    def test_nesting_vacuous_without_transit(self, lat200):
        lat = copy.copy(lat200)
        lat.cls = np.where(lat200.cls == 1, 2, lat200.cls)
        rep = verify_nesting(lat)
        assert rep.passed and rep.measured_constants["transit_entries"] == 0

    def test_regularity_report(self, comb_lat):
        rep = verify_regularity(comb_lat)
        c = rep.measured_constants
        assert c["eta_hat"] > 0
        for t in "abc":
            assert 0 <= c[f"{t}_pass_rate"] <= 1
        assert rep.passed == (all(c[f"{t}_violations"] == 0 for t in "abc") and c["eta_hat"] > 0)

    def test_eta_oracle(self, comb_lat):
        # independent loop: min over intersecting pairs of log2(l_x / l_y) / m
        mu = comb_lat.mu
        gens = comb_lat.transit_generations()
        sup = mu.sup_distances()
        best = np.inf
        for k in gens:
            for k2 in gens:
                if k2 <= k:
                    continue
                sx, sy = comb_lat.sides("Q", k), comb_lat.sides("Q", k2)
                for x in range(mu.size):
                    for y in range(mu.size):
                        if 0 < sx[x] < np.inf and sy[y] > 0 and sup[x, y] <= (sx[x] + sy[y]) * (1 + 1e-12):
                            best = min(best, np.log2(sx[x] / sy[y]) / (k2 - k))
        assert fit_eta(comb_lat)[0] == pytest.approx(best, rel=1e-12)


class TestSerialization:
    def test_entry_fields(self, comb_lat):
        data = json.loads(json.dumps(comb_lat.to_json()))
        e = data["entries"][0]
        assert {"point_index", "k", "class", "cube", "aux", "achieved_deltas"} <= set(e)
        assert len(data["entries"]) == comb_lat.mu.size * len(comb_lat.ks)

    def test_roundtrip(self, comb_lat, tmp_path):
        p = tmp_path / "lat.json"
        comb_lat.save(p)
        back = load_lattice(comb_lat.mu, p)
        for name in comb_lat.idx:
            np.testing.assert_array_equal(back.idx[name], comb_lat.idx[name])

    def test_mismatched_measure_rejected(self, comb_lat, tmp_path):
        p = tmp_path / "lat.json"
        comb_lat.save(p)
        other = generate_example("comb", level=4, ratio=0.3)
        with pytest.raises(LatticeError):
            load_lattice(other, p)


@given(st.integers(2, 5), st.sampled_from([(0.1, 0.2, 0.4), (0.05, 0.15, 0.5), (0.08, 0.25, 0.35)]))
def test_generation_monotonicity(G, fractions):
    mu = generate_example("comb", level=3)
    lat = build_lattice(mu, LatticeConfig.calibrated(LevelTable.build(mu), G, fractions))
    S = np.stack([lat.sides("Q", int(k)) for k in lat.ks])
    assert np.all(S[1:] <= S[:-1])
    C = np.stack([lat.classes(int(k)) for k in lat.ks])
    assert np.all(np.diff(C, axis=0) >= 0)
