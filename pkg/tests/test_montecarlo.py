"""Tests for the replica harness and the limit-theorem diagnostics."""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from error_handler import (
    EmptySample,
    InvalidParams,
    MinimumHorizon,
    ResourceLimit,
    UsageError,
    WrongRegime,
    ZeroProbability,
)
from montecarlo import (
    ExperimentConfig,
    ReplicaSummary,
    chi2_limit_check,
    chi2_scaled_statistic,
    clt_report,
    clt_report_theorem2,
    clt_report_theorem3,
    random_limit_check,
    run_experiment,
    theta_moment_decay,
)
from schedules import example1, example2, pemantle_power, standard_polya
from urn import UrnParams, replica_seed


def example1_config(horizons=(100,), replicas=20, seed=1, b0=(1.0, 2.0, 3.0), **kwargs):
    schedule, required = example1(1.0, 0.5, list(b0), burn_in=True)
    return ExperimentConfig(
        params=UrnParams.with_B0_norm(b0, required),
        schedule=schedule.spec,
        horizons=horizons,
        replicas=replicas,
        base_seed=seed,
        **kwargs,
    )


def polya_config(horizons=(100,), replicas=20, seed=1, **kwargs):
    return ExperimentConfig(
        params=UrnParams([1.0, 1.0], [0.0, 0.0]),
        schedule=standard_polya(1.0).spec,
        horizons=horizons,
        replicas=replicas,
        base_seed=seed,
        **kwargs,
    )


def summary(counts, p0):
    counts = np.asarray(counts)
    N = int(counts.sum())
    xi_bar = counts / N
    p0 = np.asarray(p0, dtype=float)
    return ReplicaSummary(0, N, xi_bar, xi_bar, xi_bar - p0, xi_bar, 0.0, counts, p0)


@pytest.fixture(scope='module')
def example1_run():
    """c = 1, eps = 1/2, k = 3, p0 = (1/6, 1/3, 1/2)."""
    return run_experiment(example1_config(horizons=(1000, 2500, 10_000), replicas=1000, seed=20200223))


class TestValidation:
    @pytest.mark.parametrize('kwargs,error', [
        ({'replicas': 0}, InvalidParams),
        ({'horizons': ()}, MinimumHorizon),
        ({'horizons': (0, 10)}, MinimumHorizon),
        ({'horizons': (10, 10)}, InvalidParams),
        ({'horizons': (20, 10)}, InvalidParams),
        ({'threads': 0}, InvalidParams),
        ({'record': {'everything'}}, InvalidParams),
        ({'replicas': 10, 'horizons': (100,), 'step_budget': 500}, ResourceLimit),
    ])
    def test_rejected_configs(self, kwargs, error):
        with pytest.raises(error):
            polya_config(**kwargs).validate()

    def test_wrong_B0_for_example1(self):
        schedule, _ = example1(1.0, 0.5, [1.0, 2.0, 3.0], burn_in=True)
        config = ExperimentConfig(UrnParams([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]), schedule.spec, (10,), 2, 0)
        with pytest.raises(InvalidParams) as exc_info:
            config.validate()
        assert exc_info.value.details['required_B0_norm'] == pytest.approx(6.0)

    def test_wrong_b0_for_schedule(self):
        schedule, _ = example1(1.0, 0.5, [1.0, 2.0, 3.0], burn_in=True)
        config = ExperimentConfig(UrnParams([1.0, 1.0, 1.0], [2.0, 2.0, 2.0]), schedule.spec, (10,), 2, 0)
        with pytest.raises(InvalidParams):
            config.validate()


class TestRunExperiment:
    def test_shapes_and_horizons(self):
        result = run_experiment(example1_config(horizons=(10, 50), replicas=7))
        assert [h.horizon for h in result.horizons] == [10, 50]
        assert result.at(10).xi_bar.shape == (7, 3)
        np.testing.assert_allclose(result.at(10).xi_bar.sum(axis=1), 1.0)
        assert np.all(result.final.chi2 >= 0)
        assert result.at(10).late_psi_var is None
        assert result.final.late_psi_var.shape == (7, 3)
        with pytest.raises(UsageError):
            result.at(11)

    def test_deterministic(self):
        first = run_experiment(example1_config(replicas=9, seed=42))
        second = run_experiment(example1_config(replicas=9, seed=42))
        np.testing.assert_array_equal(first.final.xi_bar, second.final.xi_bar)
        np.testing.assert_array_equal(first.final.psi_bar, second.final.psi_bar)

    def test_independent_of_threads_and_batches(self):
        serial = run_experiment(example1_config(replicas=23, threads=1, batch_size=50))
        threaded = run_experiment(example1_config(replicas=23, threads=3, batch_size=4))
        assert [s.replica for s in threaded.final.replicas] == list(range(23))
        np.testing.assert_array_equal(serial.final.xi_bar, threaded.final.xi_bar)
        np.testing.assert_array_equal(serial.final.psi_final, threaded.final.psi_final)
        np.testing.assert_allclose(
            serial.final.xi_moments.mean, threaded.final.xi_moments.mean, rtol=1e-12
        )

    def test_horizons_are_checkpoints_of_one_trajectory(self):
        result = run_experiment(polya_config(horizons=(5, 40), replicas=30))
        early = result.at(5).replicas
        late = result.at(40).replicas
        for a, b in zip(early, late):
            assert np.all(b.counts >= a.counts)

    def test_martingale_identity(self, example1_run):
        final = example1_run.final
        np.testing.assert_allclose(
            final.xi_bar - final.psi_bar,
            np.vstack([s.martingale_mean for s in final.replicas]),
        )
        np.testing.assert_allclose(final.theta_bar, final.psi_bar - final.p0, atol=1e-15)

    def test_horizon_table(self, example1_run):
        table = example1_run.horizon_table()
        assert list(table.columns) == ['horizon', 'component', 'p0', 'mean_xi_bar', 'sd_xi_bar', 'mc_se']
        assert len(table) == 9
        final = table[table.horizon == 10_000]
        np.testing.assert_allclose(final.mean_xi_bar, [1 / 6, 1 / 3, 1 / 2], atol=0.01)

    def test_manifest(self):
        result = run_experiment(example1_config(horizons=(20, 40), replicas=5, seed=9))
        manifest = result.to_manifest()
        assert manifest['seeds'] == [replica_seed(9, r) for r in range(5)]
        assert manifest['config']['horizons'] == [20, 40]
        assert manifest['schedule']['variant'] == 'example1'
        assert [row['horizon'] for row in manifest['lambda_table']] == [20, 40]
        assert len(manifest['horizon_table']) == 6

    def test_no_lambda_table_for_polya(self):
        assert run_experiment(polya_config(replicas=4)).lambda_table() == []


class TestCentralLimit:
    def test_variance_matches_theory(self, example1_run):
        report = clt_report_theorem2(example1_run.final)
        assert report.e == 0.5
        assert report.lambda_theory == 4.0
        np.testing.assert_allclose(report.variance_ratios, 1.0, atol=0.15)
        assert report.lambda_hat == pytest.approx(4.0, rel=0.15)

    def test_standardized_values_look_normal(self, example1_run):
        report = clt_report(example1_run.final)
        assert report.ks_pvalues.shape == (3,)
        assert report.normality_passes(0.01)

    def test_dominant_plus_remainder(self, example1_run):
        final = example1_run.final
        report = clt_report_theorem2(final)
        scaled = math.sqrt(final.horizon) * (final.xi_bar - final.p0)
        np.testing.assert_allclose(report.dominant - report.remainder, scaled, atol=1e-9)

    def test_remainder_shrinks(self, example1_run):
        early = clt_report_theorem2(example1_run.at(1000))
        late = clt_report_theorem2(example1_run.at(10_000))
        assert late.mean_remainder < early.mean_remainder

    def test_eps_one_lambda(self, example1_run):
        report = clt_report_theorem2(example1_run.final, eps=1.0)
        assert report.lambda_theory == 5.0

    def test_scaled_chi2_limit(self, example1_run):
        check = chi2_limit_check(example1_run.final, 0.5, 4.0)
        assert check.df == 2
        assert check.limit.shape == 1.0
        assert check.limit.rate == pytest.approx(1 / 8)
        assert check.passes(0.01)

    def test_theta_moment_decay(self):
        eps, delta = 0.75, 0.5
        schedule = example2(eps, delta, 0.7)
        params = UrnParams.with_B0_norm([0.35, 0.35], schedule.required_B0_norm)
        config = ExperimentConfig(
            params=params,
            schedule=schedule.spec,
            horizons=(1000, 10_000),
            replicas=20_000,
            base_seed=20200223,
            batch_size=5000,
            chunk_size=512,
            record=frozenset(),
        )
        result = run_experiment(config)
        decay = theta_moment_decay(result.horizons, params, schedule)
        target = -(2 * delta - eps)

        assert decay.horizons == (1000, 10_000)
        assert decay.slope == pytest.approx(target, abs=0.1)
        assert decay.exact_slope == pytest.approx(target, abs=0.1)
        assert decay.exact_slope == pytest.approx(-0.183, abs=0.005)
        np.testing.assert_allclose(decay.mean_sq_norm, decay.exact_mean_sq, rtol=0.05)

    def test_theta_moment_decay_without_model(self, example1_run):
        decay = theta_moment_decay(example1_run.horizons)
        assert decay.horizons == (1000, 2500, 10_000)
        assert decay.exact_mean_sq is None and decay.exact_slope is None
        with pytest.raises(UsageError):
            theta_moment_decay(example1_run.horizons[:1])

    def test_slow_regime(self):
        schedule = example2(0.75, 0.5, 1.0)
        config = ExperimentConfig(
            params=UrnParams.with_B0_norm([0.5, 0.5], schedule.required_B0_norm),
            schedule=schedule.spec,
            horizons=(1000, 100_000),
            replicas=1000,
            base_seed=7,
            batch_size=1000,
        )
        result = run_experiment(config)
        report = clt_report_theorem3(result.final)
        assert report.e == pytest.approx(0.25)
        assert report.lambda_theory == pytest.approx(2 / 3)
        assert report.lambda_hat == pytest.approx(2 / 3, rel=0.25)
        assert report.normality_passes(0.01)
        early = clt_report(result.at(1000))
        assert report.mean_remainder < early.mean_remainder
        assert report.mean_remainder < np.mean(np.linalg.norm(report.dominant, axis=1))

    def test_wrong_regime(self, example1_run):
        with pytest.raises(WrongRegime):
            clt_report_theorem3(example1_run.final)
        polya = run_experiment(polya_config(replicas=3))
        with pytest.raises(WrongRegime):
            clt_report(polya.final)


class TestScaledChi2:
    def test_scaled_statistic(self):
        assert chi2_scaled_statistic(summary([60, 40], [0.5, 0.5]), 0.25, 100) == pytest.approx(0.4)

    def test_exact_fit(self):
        assert chi2_scaled_statistic(summary([50, 50], [0.5, 0.5]), 0.25, 100) == 0.0

    def test_zero_probability(self):
        with pytest.raises(ZeroProbability):
            chi2_scaled_statistic(summary([10, 0], [1.0, 0.0]), 0.5, 10)


class TestRandomLimit:
    def test_pemantle_power_has_random_limit(self):
        config = ExperimentConfig(
            params=UrnParams([1.0, 1.0], [0.0, 0.0]),
            schedule=pemantle_power(1.0, 2.0).spec,
            horizons=(1000,),
            replicas=200,
            base_seed=3,
        )
        report = random_limit_check(run_experiment(config).final)
        assert report.random_limit
        assert report.to_dict()['random_limit'] is True

    def test_polya_limit_is_uniform(self):
        result = run_experiment(polya_config(horizons=(1000,), replicas=2000, seed=5))
        report = random_limit_check(result.final)
        assert report.random_limit
        np.testing.assert_allclose(report.across_var, 1 / 12, rtol=0.1)

    def test_example1_limit_is_deterministic(self):
        result = run_experiment(example1_config(horizons=(2000,), replicas=200, seed=11))
        assert not random_limit_check(result.final).random_limit

    def test_needs_late_window(self):
        result = run_experiment(polya_config(replicas=3, record=frozenset()))
        with pytest.raises(UsageError):
            random_limit_check(result.final)

    def test_needs_two_replicas(self):
        result = run_experiment(polya_config(replicas=1))
        with pytest.raises(EmptySample):
            random_limit_check(result.final)
