"""Tests for the grp-urn command-line interface."""

import json
import sys
from pathlib import Path

import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from error_handler import EXIT_BAD_FIT, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, ConvergenceError
from grpurn import cli
from schedules import ScheduleSpec

FIXTURE = Path(__file__).parent.parent / 'data' / 'covid_table3.csv'


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / 'grp-urn-config.yaml'
    path.write_text(yaml.safe_dump({
        'simulation': {'replicas': 4, 'horizons': [10, 20]},
        'output': {'directory': str(tmp_path / 'output')},
        'logging': {'level': 'WARNING'},
    }))
    return path


@pytest.fixture
def example1_spec(tmp_path):
    spec = ScheduleSpec('example1', {'c': 1.0, 'eps': 0.5, 'b0_norm': 6.0, 'burn_in': True})
    return spec.save(tmp_path / 'example1.json')


class TestSimulate:
    def test_writes_reports(self, runner, config_path, example1_spec, tmp_path):
        out = tmp_path / 'sim'
        result = runner.invoke(cli, [
            '-c', str(config_path), 'simulate',
            '--schedule', example1_spec, '--b0', '1,2,3',
            '--horizons', '20,40', '--replicas', '5', '--seed', '3', '--out', str(out),
        ])
        assert result.exit_code == EXIT_OK, result.output
        assert 'lambda_hat=' in result.output
        assert (out / 'horizon_20.csv').exists()
        assert (out / 'horizon_40.csv').exists()
        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['config']['replicas'] == 5
        assert manifest['config']['params']['B0'] == pytest.approx([1.0, 2.0, 3.0])
        assert (out / 'clt_report.json').exists()

    def test_uses_config_defaults(self, runner, config_path, tmp_path):
        spec = ScheduleSpec('standard_polya', {'alpha': 1.0}).save(tmp_path / 'polya.json')
        result = runner.invoke(cli, ['-c', str(config_path), 'simulate', '--schedule', spec, '--b0', '1,1'])
        assert result.exit_code == EXIT_OK, result.output
        manifest = json.loads((tmp_path / 'output' / 'manifest.json').read_text())
        assert manifest['config']['horizons'] == [10, 20]
        assert len(manifest['seeds']) == 4
        assert not (tmp_path / 'output' / 'clt_report.json').exists()

    def test_record_flags_from_config(self, runner, tmp_path):
        path = tmp_path / 'quiet.yaml'
        path.write_text(yaml.safe_dump({
            'simulation': {'replicas': 2, 'horizons': [10], 'record': []},
            'output': {'directory': str(tmp_path / 'quiet')},
            'logging': {'level': 'WARNING'},
        }))
        spec = ScheduleSpec('standard_polya', {'alpha': 1.0}).save(tmp_path / 'polya.json')
        result = runner.invoke(cli, ['-c', str(path), 'simulate', '--schedule', spec, '--b0', '1,1'])
        assert result.exit_code == EXIT_OK, result.output
        manifest = json.loads((tmp_path / 'quiet' / 'manifest.json').read_text())
        assert manifest['config']['record'] == []

    def test_unknown_record_flag(self, runner, tmp_path):
        path = tmp_path / 'typo.yaml'
        path.write_text(yaml.safe_dump({'simulation': {'record': ['late_windw']}, 'logging': {'level': 'WARNING'}}))
        spec = ScheduleSpec('standard_polya', {'alpha': 1.0}).save(tmp_path / 'polya.json')
        result = runner.invoke(cli, ['-c', str(path), 'simulate', '--schedule', spec, '--b0', '1,1',
                                     '--out', str(tmp_path / 'never')])
        assert result.exit_code == EXIT_USAGE
        assert 'InvalidParams' in result.output

    def test_unknown_variant(self, runner, config_path, tmp_path):
        spec = tmp_path / 'bad.json'
        spec.write_text('{"variant": "urn9000", "params": {}}')
        result = runner.invoke(cli, ['-c', str(config_path), 'simulate', '--schedule', str(spec), '--b0', '1,1'])
        assert result.exit_code == EXIT_USAGE
        assert 'UnknownVariant' in result.output

    def test_wrong_B0(self, runner, config_path, example1_spec):
        result = runner.invoke(cli, [
            '-c', str(config_path), 'simulate', '--schedule', example1_spec, '--b0', '1,2,3', '--B0', '0,0,0',
        ])
        assert result.exit_code == EXIT_USAGE
        assert 'InvalidParams' in result.output

    def test_bad_vector(self, runner, config_path, example1_spec):
        result = runner.invoke(cli, ['-c', str(config_path), 'simulate', '--schedule', example1_spec, '--b0', '1,x'])
        assert result.exit_code == EXIT_USAGE


class TestGofCommands:
    def test_classical_special_case(self, runner, config_path, tmp_path):
        target = tmp_path / 'gof.json'
        result = runner.invoke(cli, [
            '-c', str(config_path), 'gof', '--data', str(FIXTURE),
            '--eta', '0', '--lambda', '1', '--df', 'L-1', '--json', str(target),
        ])
        assert result.exit_code == EXIT_OK, result.output
        assert 'shape=10 ' in result.output
        payload = json.loads(target.read_text())
        assert payload['aggregate_stat'] == pytest.approx(5507.80, abs=0.05)
        assert payload['df_shape'] == 10.0
        assert len(payload['per_cluster']) == 21
        pvalues = pd.read_csv(tmp_path / 'gof_pvalues.csv')
        assert list(pvalues.columns) == ['label', 'N', 'T', 'Q', 'p_value']
        assert len(pvalues) == 21

    def test_fitted(self, runner, config_path, tmp_path):
        result = runner.invoke(cli, ['-c', str(config_path), 'gof', '--data', str(FIXTURE)])
        assert result.exit_code == EXIT_OK, result.output
        assert 'eta=0.4363572' in result.output
        payload = json.loads((tmp_path / 'output' / 'gof_result.json').read_text())
        assert payload['aggregate_p'] == pytest.approx(0.4579, abs=1e-3)

    def test_bad_eta(self, runner, config_path):
        result = runner.invoke(cli, ['-c', str(config_path), 'gof', '--data', str(FIXTURE), '--eta', 'half'])
        assert result.exit_code == EXIT_USAGE

    def test_estimate(self, runner, config_path):
        result = runner.invoke(cli, ['-c', str(config_path), 'estimate', '--data', str(FIXTURE)])
        assert result.exit_code == EXIT_OK, result.output
        assert '"case": "Interior"' in result.output
        assert '"eta_hat": 0.43635' in result.output
        assert '"normalization": "L_minus_1"' in result.output

    def test_estimate_bad_fit_exit_code(self, runner, config_path, tmp_path):
        data = tmp_path / 'growing.csv'
        data.write_text('label,a,b\nsmall,5,5\nmedium,60,40\nlarge,700,300\n')
        result = runner.invoke(cli, [
            '-c', str(config_path), 'estimate', '--data', str(data), '--pstar', 'uniform', '--df', 'L',
        ])
        assert result.exit_code == EXIT_BAD_FIT
        assert 'BoundaryBadFit' in result.output

    def test_estimate_equal_sizes(self, runner, config_path, tmp_path):
        data = tmp_path / 'equal.csv'
        data.write_text('label,a,b\nx,6,4\ny,3,7\n')
        result = runner.invoke(cli, ['-c', str(config_path), 'estimate', '--data', str(data), '--pstar', 'uniform'])
        assert result.exit_code == 4
        assert 'DegenerateClusters' in result.output

    def test_missing_data_file(self, runner, config_path, tmp_path):
        result = runner.invoke(cli, ['-c', str(config_path), 'estimate', '--data', str(tmp_path / 'none.csv')])
        assert result.exit_code == EXIT_USAGE


class TestReplicateCovid:
    def test_reproduces_reference(self, runner, config_path, tmp_path):
        target = tmp_path / 'covid.json'
        result = runner.invoke(cli, ['-c', str(config_path), 'replicate-covid', '--json', str(target)])
        assert result.exit_code == EXIT_OK, result.output
        assert 'eta_hat=0.4363572' in result.output
        assert 'lambda_hat=2.728099' in result.output
        assert 'aggregate_p=0.4579' in result.output
        payload = json.loads(target.read_text())
        assert payload['total_size'] == 699450
        assert all(check['passed'] for check in payload['checks'])
        assert len(payload['likelihood_curve']) == 200

    def test_l_convention_skips_checks(self, runner, config_path, tmp_path):
        target = tmp_path / 'covid_l.json'
        result = runner.invoke(cli, ['-c', str(config_path), 'replicate-covid', '--df', 'L', '--json', str(target)])
        assert result.exit_code == EXIT_OK, result.output
        payload = json.loads(target.read_text())
        assert payload['df_convention'] == 'L'
        assert 'checks' not in payload


class TestTrajectoryAndWeights:
    def test_trajectory(self, runner, config_path, tmp_path):
        spec = ScheduleSpec('rescaled_polya', {'alpha': 1.0, 'beta': 0.9}).save(tmp_path / 'rescaled.json')
        out = tmp_path / 'path.csv'
        result = runner.invoke(cli, [
            '-c', str(config_path), 'trajectory', '--schedule', spec,
            '--b0', '1,1,1', '--steps', '25', '--seed', '8', '--out', str(out),
        ])
        assert result.exit_code == EXIT_OK, result.output
        lines = out.read_text().splitlines()
        assert len(lines) == 26
        assert lines[0].split(',')[:2] == ['n', 'xi_index']

    def test_trajectory_needs_positive_steps(self, runner, config_path, tmp_path):
        spec = ScheduleSpec('standard_polya', {'alpha': 1.0}).save(tmp_path / 'polya.json')
        result = runner.invoke(cli, [
            '-c', str(config_path), 'trajectory', '--schedule', spec, '--b0', '1,1',
            '--steps', '0', '--out', str(tmp_path / 'x.csv'),
        ])
        assert result.exit_code == EXIT_USAGE

    def test_weights(self, runner, config_path, tmp_path):
        spec = ScheduleSpec('pemantle_power', {'a': 1.0, 'exponent': 2.0}).save(tmp_path / 'pp.json')
        out = tmp_path / 'w.csv'
        result = runner.invoke(cli, ['-c', str(config_path), 'weights', '--schedule', spec, '--n', '20', '--out', str(out)])
        assert result.exit_code == EXIT_OK, result.output
        assert 'h_star=20' in result.output
        assert 'eventually_increasing=false' in result.output
        assert len(out.read_text().splitlines()) == 21

    def test_weights_increasing_profile(self, runner, config_path, tmp_path):
        spec = ScheduleSpec('rescaled_polya', {'alpha': 1.0, 'beta': 0.5}).save(tmp_path / 'r.json')
        result = runner.invoke(cli, ['-c', str(config_path), 'weights', '--schedule', spec, '--n', '10',
                                     '--out', str(tmp_path / 'w.csv')])
        assert result.exit_code == EXIT_OK, result.output
        assert 'h_star=1' in result.output
        assert 'eventually_increasing=true' in result.output


class TestGroupOptions:
    def test_verbose_forces_debug(self, runner, config_path, mocker):
        setup = mocker.patch('grpurn.setup_logging')
        result = runner.invoke(cli, ['-c', str(config_path), '-v', 'estimate', '--data', str(FIXTURE)])
        assert result.exit_code == EXIT_OK, result.output
        setup.assert_called_once_with(log_level='WARNING', log_file=None, verbose=True)

    def test_replicate_forwards_convention(self, runner, config_path, mocker):
        pipeline = mocker.patch('grpurn.run_covid_pipeline', side_effect=ConvergenceError('stop'))
        result = runner.invoke(cli, ['-c', str(config_path), 'replicate-covid', '--df', 'L', '--no-check'])
        assert result.exit_code == EXIT_NUMERICAL
        kwargs = pipeline.call_args.kwargs
        assert kwargs['df_convention'] == 'L'
        assert kwargs['check'] is False
        assert kwargs['max_lag'] == 10
