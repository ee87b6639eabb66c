import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from loopsoup.errors import ConfigError, MemoryGuardError
from loopsoup.experiment import (
    ExperimentConfig, calibrate_for, calibrate_threshold, classify_failures, discrete_d3_study,
    expected_loop_count, experiment_sequence, failure_scaling_study, fit_sup_scaling, run_experiment,
)
from loopsoup.rng import RandomStream
from loopsoup.soup import build_coupled_brownian_soup, sample_poisson_field


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"theta": 2.0}, {"theta": 0.0}, {"a": 0.0}, {"r": 0.5}, {"lam": 0.0}, {"reps": 0},
        {"N": 0}, {"N": 2.5}, {"d": 0}, {"variant": "lazy"},
    ])
    def test_rejects(self, kwargs):
        base = {"d": 2, "variant": "continuous", "N": 8}
        with pytest.raises(ConfigError):
            ExperimentConfig(**{**base, **kwargs})

    def test_derived(self):
        cfg = ExperimentConfig(2, "continuous", 8, theta=1.0, a=2.0)
        assert cfg.k == 4.0
        assert cfg.eta == 4.0
        assert cfg.n_theorem() == 8
        assert cfg.n_range() == (8, 8 ** 4 - 1)
        cfg3 = ExperimentConfig(3, "discrete", 4, theta=1.5, a=1.0)
        assert cfg3.k == pytest.approx(2 + 2 / 3)
        assert cfg3.n_range()[0] == min(math.floor(3 * 8 / 2), 8)

    def test_window(self):
        w = ExperimentConfig(2, "continuous", 4).window()
        assert (w.n_min, w.n_max, w.lambdas) == (4, 255, (1.0,))


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(ExperimentConfig(2, "continuous", 8, reps=3, seed=3))


class TestRun:
    def test_invariants(self, small_report):
        rep = small_report
        assert rep.time_gap_violations == 0
        assert rep.time_gap_max <= rep.time_gap_bound
        assert rep.bijection_ok
        assert rep.root_mismatches == 0
        assert len(rep.correspondence_sizes) == 3
        assert rep.correspondence_size == len(rep.scaled_sups)
        assert set(rep.sup_dist_percentiles) == {50, 90, 99, 100}
        assert rep.sup_dist_percentiles[100] == pytest.approx(rep.scaled_sups.max())
        assert rep.event_A_count == 0
        assert math.isnan(rep.threshold_c)

    def test_gap_bound_value(self, small_report):
        seq = experiment_sequence(2, "continuous")
        assert small_report.time_gap_bound == pytest.approx((seq.tail_constant + 1 + 1e-9) / 64)

    def test_expected_counts(self, small_report):
        # mass beyond cell 8^4 is about 1/(2 pi a_n) per site with a_n ~ n, over 197 sites
        assert small_report.expected_Z == pytest.approx(197 / (2 * math.pi * 8 ** 4), rel=1e-3)
        assert small_report.large_n_probability == pytest.approx(-math.expm1(-small_report.expected_Z))
        assert np.mean(small_report.W) == pytest.approx(small_report.expected_W, rel=0.5)

    def test_to_dict(self, small_report):
        d = small_report.to_dict()
        assert d["config"]["N"] == 8
        assert isinstance(d["scaled_sups"], list)

    def test_threads_deterministic(self):
        cfg = ExperimentConfig(2, "continuous", 4, reps=4, seed=11)
        a = run_experiment(cfg)
        b = run_experiment(replace(cfg, threads=2))
        np.testing.assert_array_equal(a.scaled_sups, b.scaled_sups)
        assert a.correspondence_sizes == b.correspondence_sizes

    def test_memory_guard(self):
        with pytest.raises(MemoryGuardError):
            run_experiment(ExperimentConfig(2, "continuous", 8, loop_cap=1.0))

    def test_expected_loop_count(self):
        cfg = ExperimentConfig(2, "continuous", 8)
        assert expected_loop_count(cfg) > 0

    @pytest.mark.parametrize("d,variant", [(1, "discrete"), (2, "discrete"), (3, "discrete"), (3, "continuous")])
    def test_invariants_other_models(self, d, variant):
        N = 4 if d < 3 else 2
        rep = run_experiment(ExperimentConfig(d, variant, N, reps=2, seed=1, a=1.0))
        assert rep.time_gap_violations == 0
        assert rep.bijection_ok
        assert rep.root_mismatches == 0

    def test_event_a_with_tiny_threshold(self):
        cfg = ExperimentConfig(2, "continuous", 4, reps=2, seed=2, theta=0.5)
        rep = run_experiment(cfg, threshold_c=1e-9)
        assert rep.event_A_count == sum(rep.W)
        assert rep.failure_frequency == float(np.mean([w > 0 or z > 0 for w, z in zip(rep.W, rep.Z)]))


class TestClassify:
    def test_classify(self):
        cfg = ExperimentConfig(2, "continuous", 4, theta=0.5)
        w = cfg.window()
        stream = RandomStream(5)
        f = sample_poisson_field(w, stream)
        soup = build_coupled_brownian_soup(f, w, experiment_sequence(2, "continuous"), stream, keep_paths=False)
        none, large = classify_failures(soup, cfg)
        assert none == [] and large == []
        every, _ = classify_failures(soup, cfg, 1e-12)
        inside = np.sum(soup.site ** 2, axis=1) < 16
        assert every == list(np.nonzero(inside & (soup.n > 2))[0])


class TestStudies:
    def test_censored_failure_study(self):
        cfgs = [ExperimentConfig(2, "continuous", N, reps=2, seed=N) for N in (2, 3, 4, 5)]
        fit = failure_scaling_study(cfgs, threshold_c=1e9)
        assert fit.censored
        assert math.isnan(fit.slope)
        assert fit.upper_bounds == pytest.approx([1 - 0.05 ** 0.5] * 4)
        with pytest.raises(ConfigError):
            failure_scaling_study(cfgs[:3])

    def test_uncensored_failure_study(self):
        cfgs = [ExperimentConfig(2, "continuous", N, reps=3, seed=N, theta=0.5) for N in (2, 3, 4, 5)]
        fit = failure_scaling_study(cfgs, threshold_c=1e-12)
        assert not fit.censored
        assert fit.ci[0] <= fit.slope <= fit.ci[1]

    def test_fit_sup_scaling(self):
        reps = [SimpleNamespace(config={"N": N}, sup_dist_percentiles={99: 3.0 * math.log(N) / N})
                for N in (8, 16, 32)]
        out = fit_sup_scaling(reps)
        assert out["ratio"] == pytest.approx([3.0] * 3)
        assert out["ratio_spread"] == pytest.approx(1.0)

    def test_d3_study(self):
        out = discrete_d3_study(ExperimentConfig(3, "discrete", 2, reps=2, a=1.0), [2, 3])
        assert out["exponent"] == pytest.approx(-1 / 3)
        assert all(r.bijection_ok for r in out["reports"])
        with pytest.raises(ConfigError):
            discrete_d3_study(ExperimentConfig(2, "discrete", 2), [2, 3])

    def test_calibration(self):
        cal = calibrate_threshold(1, "discrete", 64, 1e-4, samples=300, seed=1)
        assert cal.c > 0 and cal.tail_rate > 0
        assert cal.quantile == pytest.approx(cal.c * math.log(64))
        mid = calibrate_threshold(1, "discrete", 64, 0.5, samples=300, seed=1)
        assert mid.quantile < cal.quantile
        with pytest.raises(ValueError):
            calibrate_threshold(1, "discrete", 1, 0.1)

    def test_calibrate_for(self):
        cal = calibrate_for(ExperimentConfig(2, "continuous", 4), samples=100)
        assert cal.n == 4 and cal.prob == pytest.approx(4.0 ** -4)
