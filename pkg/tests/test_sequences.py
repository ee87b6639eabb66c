import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from loopsoup.loops import RootedLoop
from loopsoup.masses import mass_model
from loopsoup.sequences import (
    brownian_cell_mass, build_a_sequence, chi_N, chi_cell, mass_scale, psi_N, psi_site,
    scale_brownian_loop, scale_rw_loop, varphi_N,
)


@pytest.fixture(scope="module")
def seq2c():
    return build_a_sequence(2, "continuous", 2000)


def brownian_density(d, s):
    return (2 * math.pi) ** (-d / 2) * s ** (-d / 2 - 1)


class TestBuild:
    @pytest.mark.parametrize("d", [1, 2, 3])
    @pytest.mark.parametrize("variant", ["discrete", "continuous"])
    def test_identity_by_quadrature(self, d, variant):
        seq = build_a_sequence(d, variant, 300)
        model = mass_model(d, variant)
        for n in (1, 2, 17, 300):
            val, _ = integrate.quad(lambda s: brownian_density(d, s), seq.a[n - 1], seq.a[n],
                                    epsabs=0, epsrel=1e-13)
            assert abs(val - model.mass(n)) < 1e-12

    def test_telescoping(self):
        seq = build_a_sequence(3, "discrete", 500)
        lhs = seq.a[:-1] ** -1.5 - seq.a[1:] ** -1.5
        np.testing.assert_allclose(lhs, seq.partial_sums, rtol=1e-8)

    def test_a1_definition(self):
        for d in (1, 2, 3):
            seq = build_a_sequence(d, "continuous", 5)
            tail = mass_model(d, "continuous").tail(1)
            assert seq.a[0] == pytest.approx((2 * math.pi) ** -1 * ((d / 2) * tail) ** (-2 / d), rel=1e-12)

    def test_d1_discrete_a1(self):
        seq = build_a_sequence(1, "discrete", 5)
        assert seq.a[0] == pytest.approx((math.sqrt(2 * math.pi) * 0.5 * math.log(2)) ** -2, rel=1e-12)

    def test_increasing(self):
        for variant in ("discrete", "continuous"):
            seq = build_a_sequence(2, variant, 1000)
            assert np.all(np.diff(seq.a) > 0)

    def test_tail_constant_bounds_offsets(self, seq2c):
        assert np.all(np.abs(seq2c.offsets()) <= seq2c.tail_constant)

    def test_d2_continuous_example(self):
        seq = build_a_sequence(2, "continuous", 10 ** 4)
        inc = seq.increments()
        assert abs(inc[-1] - 1) < 1e-3
        assert np.max(np.abs(seq.offsets())) < 1.0

    def test_increments_match_differences(self, seq2c):
        np.testing.assert_allclose(seq2c.increments(), np.diff(seq2c.a), rtol=1e-9)

    def test_a_at_beyond_table(self, seq2c):
        big = build_a_sequence(2, "continuous", 5000)
        assert seq2c.a_at(4000) == pytest.approx(big.a[3999], rel=1e-13)
        np.testing.assert_allclose(seq2c.a_at(np.array([1, 2001, 4000])),
                                   [big.a[0], big.a[2000], big.a[3999]], rtol=1e-13)

    def test_cell_ratio(self, seq2c):
        n = 50
        assert seq2c.cell_ratio(n) == pytest.approx(1 - seq2c.a[n - 1] / seq2c.a[n], rel=1e-9)

    def test_offsets_converge(self):
        seq = build_a_sequence(1, "discrete", 10 ** 4)
        off = seq.offsets()
        assert off[-1] == pytest.approx(-5 / 6, abs=1e-3)

    def test_rejects(self):
        with pytest.raises(ValueError):
            build_a_sequence(2, "discrete", 0)
        with pytest.raises(ValueError):
            build_a_sequence(0, "discrete", 10)
        with pytest.raises(ValueError):
            build_a_sequence(2, "lazy", 10)

    @pytest.mark.slow
    def test_boundedness_growth(self):
        for d in (1, 2, 3):
            small = build_a_sequence(d, "discrete", 10 ** 3, probe_max=0)
            big = build_a_sequence(d, "discrete", 10 ** 5, probe_max=0)
            assert big.tail_constant - small.tail_constant < 1e-2


class TestBrownianCellMass:
    @given(st.floats(0.1, 100), st.floats(0.0, 50), st.integers(1, 4))
    @settings(max_examples=100, deadline=None)
    def test_closed_form(self, lo, width, d):
        hi = lo + width
        ref, _ = integrate.quad(lambda s: brownian_density(d, s), lo, hi, epsabs=1e-15, epsrel=1e-12)
        assert brownian_cell_mass(d, lo, hi) == pytest.approx(ref, rel=1e-9, abs=1e-14)

    def test_mass_scale(self):
        assert mass_scale(2) == pytest.approx(2 * math.pi)


class TestChi:
    def test_left_endpoint(self, seq2c):
        N = 4
        assert chi_N(seq2c.a[0] / N ** 2, N, seq2c) == pytest.approx(1 / N ** 2)

    def test_interior(self, seq2c):
        N = 3
        t = (seq2c.a[2] + seq2c.a[3]) / (2 * N ** 2)
        assert chi_N(t, N, seq2c) == pytest.approx(3 / N ** 2)

    def test_sub_threshold(self, seq2c):
        assert chi_N(seq2c.a[0] / (2 * 25), 5, seq2c) is None

    def test_rejects_nonpositive(self, seq2c):
        with pytest.raises(ValueError):
            chi_N(0.0, 2, seq2c)

    def test_cell_time_scale(self):
        seq = build_a_sequence(3, "discrete", 100)
        t = (seq.a[9] + seq.a[10]) / 2 / 16
        assert chi_N(t, 4, seq) == pytest.approx(2 * 10 / (3 * 16))

    def test_beyond_table(self, seq2c):
        t = seq2c.a_at(123456) * 1.0000001
        assert chi_cell(t, 1, seq2c) == 123456

    @given(st.floats(0.5, 3000.0), st.integers(1, 8))
    @settings(max_examples=200, deadline=None)
    def test_bracketing(self, x, N):
        seq = build_a_sequence(2, "continuous", 2000)
        t = x / N ** 2
        k = chi_cell(t, N, seq)
        if k is None:
            assert x < seq.a[0]
        else:
            assert seq.a_at(k) <= x < seq.a_at(k + 1)


class TestVarphi:
    def test_cells(self):
        assert varphi_N(1.0, 1) == 1.0
        assert varphi_N(5 / 8, 1) == 1.0
        assert varphi_N(1.6, 1) == 1.0
        assert varphi_N(1.625, 1) == 2.0
        assert varphi_N(0.6, 1) is None

    def test_scale(self):
        assert varphi_N(3 / 16, 4) == pytest.approx(3 / 16)


class TestPsi:
    def test_fixed_point(self):
        z0 = np.array([3, -2, 7])
        np.testing.assert_array_equal(psi_N(z0 / 5, 5), z0 / 5)

    def test_inside_square(self):
        np.testing.assert_array_equal(psi_N([0.4, -0.4], 1), [0.0, 0.0])

    def test_tie_rule(self):
        assert psi_N(0.25, 2) == 0.0
        assert psi_N(-0.25, 2) == -0.5

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=4), st.integers(1, 64))
    @settings(max_examples=200)
    def test_cube_membership(self, z, N):
        z = np.array(z)
        site = psi_site(z, N)
        x = N * z
        assert np.all((x > site - 0.5) & (x <= site + 0.5))
        np.testing.assert_array_equal(psi_N(z, N), site / N)


class TestScaling:
    def _loop(self):
        times = np.array([0.0, 0.5, 2.0, 4.0])
        pts = np.array([[0.0, 0.0], [1.0, 0.5], [-0.5, 2.0], [0.0, 0.0]]) + [3.0, 1.0]
        return RootedLoop("brownian", 2, 4.0, times, pts)

    def test_identity(self):
        loop = self._loop()
        out = scale_brownian_loop(loop, 1)
        np.testing.assert_array_equal(out.points, loop.points)
        assert out.t_len == loop.t_len

    def test_time_lengths(self):
        loop = self._loop()
        assert scale_brownian_loop(loop, 4).t_len == pytest.approx(4 / 16)
        assert scale_rw_loop(loop, 4).t_len == pytest.approx(4 / 32)
        assert scale_rw_loop(loop, 4, d=3).t_len == pytest.approx(4 / 48)

    def test_composition(self):
        loop = self._loop()
        a = scale_brownian_loop(scale_brownian_loop(loop, 3), 5)
        b = scale_brownian_loop(loop, 15)
        np.testing.assert_allclose(a.points, b.points, rtol=1e-15)
        np.testing.assert_allclose(a.times, b.times, rtol=1e-15)
        np.testing.assert_allclose(a.root, b.root, rtol=1e-15)
