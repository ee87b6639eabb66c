import math
from collections import Counter
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from loopsoup.bridges import (
    bessel_count_pmf, bisect_refine, brownian_levels, fill_continuous_cells, no_jump_probability,
    refine_at, sample_brownian_bridge, sample_continuous_bridge, sample_coordinate_counts,
    sample_discrete_bridge,
)
from loopsoup.loops import RootedLoop, evaluate_loop, sup_distance

from conftest import chi2_pvalue, lattice_distribution


def bridge_covariance(s, t):
    s, t = np.minimum(s, t), np.maximum(s, t)
    return s * (1 - t)


def continuous_midpoint_law(t, xs):
    """Law of a rate-1 continuous-time walk bridge on Z of length t at time t/2."""
    w = special.ive(np.abs(xs), t / 2) ** 2
    return w / w.sum()


class TestBrownian:
    def test_levels(self):
        assert brownian_levels(1) == 8
        assert brownian_levels(2 ** 10) == 14

    def test_shape_and_ends(self, stream):
        loop = sample_brownian_bridge(3, 2.5, 6, stream)
        assert loop.points.shape == (65, 3)
        assert loop.times[-1] == 2.5 and loop.t_len == 2.5
        np.testing.assert_array_equal(loop.points[0], 0)
        np.testing.assert_array_equal(loop.points[-1], 0)
        loop.validate()

    def test_deterministic(self, stream):
        a = sample_brownian_bridge(2, 1.0, 5, stream.child(1))
        b = sample_brownian_bridge(2, 1.0, 5, stream.child(1))
        c = sample_brownian_bridge(2, 1.0, 5, stream.child(2))
        np.testing.assert_array_equal(a.points, b.points)
        assert not np.array_equal(a.points, c.points)

    def test_rejects(self, stream):
        with pytest.raises(ValueError):
            sample_brownian_bridge(2, 0.0, 4, stream)
        with pytest.raises(ValueError):
            sample_brownian_bridge(2, 1.0, 0, stream)

    def test_covariance(self, stream):
        rng = stream.generator()
        t, v = bisect_refine([0.0, 1.0], np.zeros((100000, 2)), 3, 1.0, rng)
        emp = np.cov(v[:, 1:-1].T)
        ref = bridge_covariance(t[1:-1, None], t[None, 1:-1])
        assert np.max(np.abs(emp - ref)) < 0.006

    def test_covariance_scaled(self, stream):
        loops = [sample_brownian_bridge(1, 4.0, 2, stream.child(i)) for i in range(20000)]
        v = np.array([lp.points[2, 0] for lp in loops])
        assert stats.kstest(v / math.sqrt(4 * 0.25), "norm").pvalue > 0.01

    def test_max_law(self, stream):
        rng = stream.generator()
        levels = 10
        _, v = bisect_refine([0.0, 1.0], np.zeros((20000, 2)), levels, 1.0, rng)
        # discrete-grid maximum sits below the continuous one by about 0.5826 sqrt(dt)
        m = v.max(axis=1) + 0.5826 * math.sqrt(2.0 ** -levels)
        for x in (0.5, 0.8, 1.2):
            assert abs(np.mean(m >= x) - math.exp(-2 * x * x)) < 0.012

    def test_refine_at_covariance(self, stream):
        rng = stream.generator()
        t, v = bisect_refine([0.0, 1.0], np.zeros((100000, 2)), 1, 1.0, rng)
        new = np.array([0.1, 0.3, 0.35, 0.9])
        t2, v2 = refine_at(t, v, new, 1.0, rng)
        assert np.all(np.diff(t2) > 0)
        inner = np.isin(t2, np.concatenate([new, [0.5]]))
        emp = np.cov(v2[:, inner].T)
        ref = bridge_covariance(t2[inner, None], t2[None, inner])
        assert np.max(np.abs(emp - ref)) < 0.006

    def test_refine_at_keeps_existing(self, stream):
        rng = stream.generator()
        t, v = bisect_refine([0.0, 2.0], np.zeros((3, 2)), 2, 1.0, rng)
        t2, v2 = refine_at(t, v, [0.5, 0.7], 1.0, rng)
        np.testing.assert_array_equal(v2[:, np.isin(t2, t)], v)
        with pytest.raises(ValueError):
            refine_at(t, v, [2.5], 1.0, rng)


class TestDiscrete:
    def test_n1_enumeration(self, stream):
        counts = Counter()
        for i in range(8000):
            pts = sample_discrete_bridge(2, 1, stream.child(i)).points
            counts[tuple(pts[1])] += 1
        assert set(counts) == {(1, 0), (-1, 0), (0, 1), (0, -1)}
        assert stats.chisquare(list(counts.values())).pvalue > 0.01

    def test_all_paths_uniform(self, stream):
        # d=1, n=3: C(6,3)=20 closed paths, all equally likely
        counts = Counter(tuple(sample_discrete_bridge(1, 3, stream.child(i)).points[:, 0])
                         for i in range(10000))
        assert len(counts) == 20
        assert stats.chisquare(list(counts.values())).pvalue > 0.01

    @pytest.mark.parametrize("d,n", [(1, 6), (2, 5), (3, 4)])
    def test_midpoint_chi_square(self, stream, d, n):
        p = lattice_distribution(d, n)
        law = (p * p / np.sum(p * p)).ravel()
        R = n + 1
        obs = np.zeros(law.size)
        idx_shape = p.shape
        for i in range(20000):
            x = sample_discrete_bridge(d, n, stream.child(d, i)).points[n]
            obs[np.ravel_multi_index(tuple(x + R), idx_shape)] += 1
        assert chi2_pvalue(obs, law * obs.sum()) > 0.01

    def test_valid_and_closed(self, stream):
        for d in (1, 2, 3, 4):
            loop = sample_discrete_bridge(d, 50, stream.child(d))
            loop.validate()
            assert loop.points.shape == (101, d)

    def test_rejects(self, stream):
        with pytest.raises(ValueError):
            sample_discrete_bridge(2, 0, stream)
        with pytest.raises(ValueError):
            sample_discrete_bridge(2, 1.5, stream)

    @pytest.mark.parametrize("d,n", [(3, 4), (4, 3)])
    def test_coordinate_counts_law(self, stream, d, n):
        support = [k for k in product(range(n + 1), repeat=d) if sum(k) == n]
        w = np.array([1.0 / np.prod([math.factorial(x) ** 2 for x in k]) for k in support])
        rng = stream.generator()
        c = Counter(tuple(sample_coordinate_counts(d, n, rng)) for _ in range(30000))
        obs = np.array([c[k] for k in support], dtype=float)
        assert sum(c.values()) == obs.sum()
        assert chi2_pvalue(obs, w / w.sum() * obs.sum()) > 0.01


class TestContinuous:
    def test_no_jump_probability(self, stream):
        t = 1.5
        reps = 8000
        empty = sum(len(sample_continuous_bridge(2, t, stream.child(i)).times) == 1 for i in range(reps))
        p = no_jump_probability(2, t)
        assert p == pytest.approx(1 / special.iv(0, t / 2) ** 2)
        assert abs(empty / reps - p) < 4 * math.sqrt(p * (1 - p) / reps)

    @pytest.mark.parametrize("d,t", [(1, 3.0), (2, 8.0), (3, 20.0)])
    def test_jump_count_mean(self, stream, d, t):
        jumps = [len(sample_continuous_bridge(d, t, stream.child(i)).times) - 1 for i in range(4000)]
        mean = t * special.ive(1, t / d) / special.ive(0, t / d)
        sd = np.std(jumps) / math.sqrt(len(jumps))
        assert abs(np.mean(jumps) - mean) < 4 * sd

    def test_midpoint_chi_square(self, stream):
        t = 6.0
        xs = np.arange(-15, 16)
        obs = np.zeros(len(xs))
        for i in range(10000):
            loop = sample_continuous_bridge(1, t, stream.child(i))
            x = int(evaluate_loop(loop, 0.5)[0])
            obs[x + 15] += 1
        assert chi2_pvalue(obs, continuous_midpoint_law(t, xs) * obs.sum()) > 0.01

    def test_valid_and_balanced(self, stream):
        for d in (1, 2, 3):
            loop = sample_continuous_bridge(d, 40.0, stream.child(d)).validate()
            assert loop.times[0] == 0.0

    def test_rejects(self, stream):
        with pytest.raises(ValueError):
            sample_continuous_bridge(2, 0.0, stream)


class TestBesselCounts:
    @pytest.mark.parametrize("x,order", [(0.5, 0), (3.0, 2), (40.0, 0), (100.0, 7)])
    def test_pmf_vs_direct(self, x, order):
        lo, pmf = bessel_count_pmf(x, order)
        m = lo[0] + np.arange(pmf.shape[1])
        logw = (2 * m + order) * np.log(x / 2) - special.gammaln(m + 1) - special.gammaln(m + order + 1)
        ref = np.exp(logw - special.logsumexp(logw))
        np.testing.assert_allclose(pmf[0], ref, atol=1e-14)
        # normalizer is I_order(x)
        full = np.exp(special.logsumexp(logw)) * np.exp(-x)
        assert full == pytest.approx(special.ive(order, x), rel=1e-10)

    def test_zero_rate(self):
        lo, pmf = bessel_count_pmf(0.0, 3)
        assert lo[0] == 0 and pmf[0, 0] == 1.0

    def test_fill_cells(self, stream):
        rng = stream.generator()
        deltas = np.array([0, 3, -2, 0, 5])
        starts = np.arange(5) * 2.0
        t, s, c = fill_continuous_cells(starts, 2.0, 1.5, deltas, rng)
        for i, dlt in enumerate(deltas):
            assert s[c == i].sum() == dlt
            assert np.all((t[c == i] > starts[i]) & (t[c == i] < starts[i] + 2.0))
        assert np.all(np.diff(t) > 0)


class TestLoopGeometry:
    def _step(self):
        return RootedLoop("rw_continuous", 1, 4.0, [0.0, 1.0, 3.0], [[0], [1], [0]])

    def test_evaluate_step(self):
        loop = self._step()
        np.testing.assert_array_equal(evaluate_loop(loop, [0.0, 0.25, 0.5, 0.75, 1.0])[:, 0], [0, 1, 1, 0, 0])
        assert evaluate_loop(loop, 0.25, left=True)[0] == 0

    def test_evaluate_linear(self):
        loop = RootedLoop("brownian", 1, 2.0, [0.0, 1.0, 2.0], [[0.0], [2.0], [0.0]])
        assert evaluate_loop(loop, 0.25)[0] == pytest.approx(1.0)
        with pytest.raises(ValueError):
            evaluate_loop(loop, 1.5)

    def test_sup_distance_hand(self):
        step = self._step()
        zero = RootedLoop("brownian", 1, 1.0, [0.0, 1.0], [[0.0], [0.0]])
        assert sup_distance(step, zero) == 1.0
        tent = RootedLoop("brownian", 1, 1.0, [0.0, 0.5, 1.0], [[0.0], [3.0], [0.0]])
        assert sup_distance(tent, zero) == 3.0
        assert sup_distance(step, tent) == pytest.approx(2.0)

    def test_extra_points_monotone(self, stream):
        a = sample_continuous_bridge(1, 10.0, stream)
        b = sample_brownian_bridge(1, 1.0, 3, stream.child(1)).rescaled(space=2.0)
        vals = [sup_distance(a, b, extra_points=k) for k in (0, 8, 64, 1024)]
        assert vals == sorted(vals)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
    @settings(max_examples=50)
    def test_self_distance_zero(self, ys):
        pts = np.array([0.0] + ys + [0.0])[:, None]
        loop = RootedLoop("brownian", 1, 1.0, np.linspace(0, 1, len(pts)), pts)
        assert sup_distance(loop, loop) == 0.0

    def test_validate_rejects(self):
        with pytest.raises(ValueError):
            RootedLoop("rw_discrete", 1, 2.0, [0, 1, 2], [[0], [1], [1]]).validate()
        with pytest.raises(ValueError):
            RootedLoop("ghost", 1, 2.0, [0, 1], [[0], [0]])
