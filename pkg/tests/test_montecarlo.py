"""
Tests for instance sampling, empirical metrics, Wasserstein distances and the
trial runner.
"""

import math

import numpy as np
import pytest

from sparse_miso.asymptotics import MetricSource, distortion_coefficients, predict_l1, thresholded_stats
from sparse_miso.config import SolverConfig, TrialConfig
from sparse_miso.errors import InvalidArgument, ScalingUndefined
from sparse_miso.fixed_point import solve_saddle
from sparse_miso.montecarlo import (
    empirical_metrics,
    reference_sample,
    run_trials,
    sample_instance,
    stream,
    w2_to_gaussian,
    w2_to_limit_e,
    w2_to_limit_x,
    wasserstein2_1d,
)
from sparse_miso.precoder import precoder_for, solve_l1_precoder


@pytest.fixture
def fig_saddle(fig_params):
    return solve_saddle(fig_params)


@pytest.fixture
def small_trial(fig_params):
    return TrialConfig(n=64, m=32, params=fig_params, num_channels=3, num_symbol_draws=3, seed=2024, ref_sample_size=2000)


class TestSampling:
    def test_deterministic_per_seed(self, fig_params):
        first = sample_instance(40, 20, fig_params, seed=7)
        second = sample_instance(40, 20, fig_params, seed=7)
        other = sample_instance(40, 20, fig_params, seed=8)

        assert np.array_equal(first.h_matrix, second.h_matrix)
        assert np.array_equal(first.symbols, second.symbols)
        assert not np.array_equal(first.h_matrix, other.h_matrix)

    def test_channels_are_distinct_streams(self, fig_params):
        a = sample_instance(40, 20, fig_params, seed=7, channel=0)
        b = sample_instance(40, 20, fig_params, seed=7, channel=1)
        assert not np.array_equal(a.h_matrix, b.h_matrix)

    def test_entry_statistics(self, fig_params):
        n, m = 400, 200
        h = sample_instance(n, m, fig_params, seed=1).h_matrix
        assert abs(h.mean()) <= 4.0 / math.sqrt(n * m * n)
        assert abs(h.var() * n - 1.0) <= 4.0 * math.sqrt(2.0 / (n * m))

    def test_symbols_are_bpsk(self, fig_params):
        s = sample_instance(40, 500, fig_params, seed=3).symbols
        assert set(np.unique(s)) == {-1.0, 1.0}

    def test_streams_are_independent_of_call_order(self):
        late = stream(5, 2, 1, 1).standard_normal(3)
        stream(5, 0, 0, 0).standard_normal(100)
        assert np.array_equal(stream(5, 2, 1, 1).standard_normal(3), late)

    def test_rejects_empty_dims(self, fig_params):
        with pytest.raises(InvalidArgument):
            sample_instance(0, 1, fig_params, seed=0)


class TestEmpiricalMetrics:
    def test_silent_precoder(self, fig_params):
        inst = sample_instance(128, 64, fig_params, seed=11)
        report = empirical_metrics(inst, np.zeros(128), fig_params, 1.0, 50, seed=11)
        metrics = report.metrics

        assert metrics.p_b == 0.0
        assert metrics.kappa == 0.0
        assert metrics.source is MetricSource.EMPIRICAL
        assert abs(metrics.ber - 0.5) <= 3.0 / math.sqrt(64 * 50)
        assert metrics.sinad_lb == pytest.approx(1.0 / (1.0 + fig_params.sigma2))

    def test_non_finite_scale(self, fig_params):
        inst = sample_instance(8, 4, fig_params, seed=0)
        with pytest.raises(ScalingUndefined):
            empirical_metrics(inst, np.zeros(8), fig_params, math.inf, 1, seed=0)

    def test_matches_definitions_on_single_draw(self, fig_params, fig_saddle):
        inst = sample_instance(64, 32, fig_params, seed=4)
        x = solve_l1_precoder(inst, fig_params).x_hat
        scale = predict_l1(fig_saddle, fig_params).scale
        report = empirical_metrics(inst, x, fig_params, scale, 1, seed=4)

        per_user = (scale * inst.h_matrix @ x - inst.symbols) ** 2 + scale ** 2 * fig_params.sigma2
        assert report.metrics.p_b == pytest.approx(float(x @ x) / 64)
        assert report.metrics.kappa == pytest.approx(np.count_nonzero(x) / 64)
        assert report.metrics.sinad_lb == pytest.approx(1.0 / per_user.mean())
        assert report.sinad_mean == pytest.approx(np.mean(1.0 / per_user))
        assert report.sinad_mean >= report.metrics.sinad_lb

    def test_resolve_counts_trials(self, fig_params, fig_saddle):
        inst = sample_instance(64, 32, fig_params, seed=4)
        x = solve_l1_precoder(inst, fig_params).x_hat
        scale = predict_l1(fig_saddle, fig_params).scale
        resolve = precoder_for(inst, fig_params, SolverConfig())
        report = empirical_metrics(inst, x, fig_params, scale, 4, seed=4, resolve=resolve)

        assert report.num_trials == 3
        assert report.num_nonconverged == 0
        assert 0.0 <= report.metrics.ber <= 1.0

    def test_doubling_draws_shrinks_ber_spread(self, fig_params):
        inst = sample_instance(64, 32, fig_params, seed=11)

        def spread(draws):
            bers = [
                empirical_metrics(inst, np.zeros(64), fig_params, 1.0, draws, seed=seed).metrics.ber
                for seed in range(400)
            ]
            return float(np.std(bers, ddof=1))

        single, double = spread(4), spread(8)
        assert single == pytest.approx(0.5 / math.sqrt(32 * 4), rel=0.15)
        assert double == pytest.approx(0.5 / math.sqrt(32 * 8), rel=0.15)
        assert 1.15 <= single / double <= 1.7


class TestWasserstein:
    def test_identical_samples(self):
        sample = np.random.default_rng(0).normal(size=500)
        assert wasserstein2_1d(sample, sample[::-1]) == 0.0

    def test_two_atoms(self):
        assert wasserstein2_1d([0.0, 3.0], [0.0, 1.0]) == pytest.approx(2.0 / math.sqrt(2.0))

    def test_unequal_sizes_use_quantiles(self):
        assert wasserstein2_1d([0.0, 1.0], [0.0, 0.0, 1.0, 1.0]) == pytest.approx(0.0, abs=1e-15)

    def test_empty_sample(self):
        with pytest.raises(InvalidArgument):
            wasserstein2_1d([], [1.0])

    def test_gaussian_target(self):
        sample = np.random.default_rng(3).normal(1.5, 2.0, 100_000)
        assert w2_to_gaussian(sample, 1.5, 2.0) < 0.05
        assert w2_to_gaussian(sample, 0.0, 2.0) == pytest.approx(1.5, abs=0.05)

    def test_limit_x_vs_its_own_reference(self, fig_params, fig_saddle):
        x = reference_sample(fig_saddle, fig_params, 3000, seed=9)
        assert w2_to_limit_x(x, fig_saddle, fig_params, 3000, seed=9) == 0.0
        assert w2_to_limit_x(x, fig_saddle, fig_params, 3000, seed=10) > 0.0

    def test_limit_x_reference_too_small(self, fig_params, fig_saddle):
        with pytest.raises(InvalidArgument):
            w2_to_limit_x(np.zeros(100), fig_saddle, fig_params, 50)

    def test_limit_e_on_exact_law(self, fig_params, fig_saddle):
        rng = np.random.default_rng(21)
        m = 40_000
        coef_g, coef_s = distortion_coefficients(fig_saddle, fig_params)
        s = 2.0 * rng.integers(0, 2, m) - 1.0
        e = coef_g * rng.standard_normal(m) + coef_s * math.sqrt(fig_params.rho) * s
        minus, plus = w2_to_limit_e(e, s, fig_saddle, fig_params)
        assert minus < 0.05
        assert plus < 0.05

    def test_limit_e_small_threshold_matches_l1(self, fig_params, fig_saddle):
        rng = np.random.default_rng(2)
        s = 2.0 * rng.integers(0, 2, 500) - 1.0
        e = rng.standard_normal(500)
        stats = thresholded_stats(1e-10, fig_saddle, fig_params)
        l1 = w2_to_limit_e(e, s, fig_saddle, fig_params)
        thresh = w2_to_limit_e(e, s, fig_saddle, fig_params, stats)
        assert thresh == pytest.approx(l1, abs=1e-8)

    def test_limit_e_classes_agree_for_balanced_symbols(self, fig_params, fig_saddle):
        rng = np.random.default_rng(31)
        m = 40_000
        coef_g, coef_s = distortion_coefficients(fig_saddle, fig_params)
        s = rng.permutation(np.repeat([-1.0, 1.0], m // 2))
        e = coef_g * rng.standard_normal(m) + coef_s * math.sqrt(fig_params.rho) * s
        minus, plus = w2_to_limit_e(e, s, fig_saddle, fig_params)
        assert abs(minus - plus) <= 0.03

    def test_limit_e_mirror_swaps_classes(self, fig_params, fig_saddle):
        rng = np.random.default_rng(32)
        s = 2.0 * rng.integers(0, 2, 300) - 1.0
        e = rng.normal(0.2, 1.3, 300)
        minus, plus = w2_to_limit_e(e, s, fig_saddle, fig_params)
        mirrored_minus, mirrored_plus = w2_to_limit_e(-e, -s, fig_saddle, fig_params)
        assert mirrored_minus == pytest.approx(plus, rel=1e-12)
        assert mirrored_plus == pytest.approx(minus, rel=1e-12)

    def test_limit_e_empty_class(self, fig_params, fig_saddle):
        with pytest.raises(InvalidArgument):
            w2_to_limit_e(np.zeros(5), np.ones(5), fig_saddle, fig_params)


class TestRunTrials:
    def test_deterministic(self, small_trial, fig_saddle):
        first = run_trials(small_trial, saddle=fig_saddle)
        second = run_trials(small_trial, saddle=fig_saddle)
        assert first.to_dict() == second.to_dict()

    def test_thread_count_does_not_change_results(self, small_trial, fig_saddle):
        serial = run_trials(small_trial, saddle=fig_saddle, workers=1)
        threaded = run_trials(small_trial, saddle=fig_saddle, workers=3)
        assert serial.to_dict() == threaded.to_dict()
        assert [r.p_b for r in serial.per_channel] == [r.p_b for r in threaded.per_channel]

    def test_single_trial_reduces_to_empirical_metrics(self, fig_params, fig_saddle):
        cfg = TrialConfig(n=64, m=32, params=fig_params, num_channels=1, num_symbol_draws=1, seed=5, ref_sample_size=500)
        aggregated = run_trials(cfg, saddle=fig_saddle)

        inst = sample_instance(64, 32, fig_params, seed=5)
        x = solve_l1_precoder(inst, fig_params).x_hat
        scale = predict_l1(fig_saddle, fig_params).scale
        single = empirical_metrics(inst, x, fig_params, scale, 1, seed=5)

        for name in ("p_b", "kappa", "sinad_lb", "ber"):
            assert getattr(aggregated.metrics, name) == getattr(single.metrics, name)
            assert aggregated.std_errors[name] == 0.0
        assert aggregated.num_trials == 1

    def test_report_shape(self, small_trial, fig_saddle):
        report = run_trials(small_trial, saddle=fig_saddle)
        assert len(report.per_channel) == 3
        assert report.num_trials == 9
        assert report.nonconverged_fraction == 0.0
        assert report.w2_x >= 0.0
        assert all(d >= 0.0 for d in report.w2_e_cond)
        assert report.metrics.sinad_lb > 0.0
