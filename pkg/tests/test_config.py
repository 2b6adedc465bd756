"""Tests for YAML configuration loading and environment overrides."""

import sys
from pathlib import Path

import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from config import ENV_SEED, ENV_THREADS, Config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'grp-urn-config.yaml'
    path.write_text(yaml.safe_dump({
        'simulation': {'replicas': 50, 'horizons': [10, 100]},
        'gof': {'df_convention': 'L'},
        'output': {'directory': './results'},
    }))
    return path


class TestConfig:
    def test_defaults_when_file_missing(self, tmp_path):
        config = Config(str(tmp_path / 'absent.yaml'), environ={})
        assert config.get('simulation.replicas') == 1000
        assert config.get('gof.df_convention') == 'L_minus_1'
        assert config.get('gof.quantile_level') == 0.95
        assert config.get('simulation.record') == ['late_window']
        assert config.get('logging.level') == 'INFO'

    def test_yaml_overrides_defaults(self, config_file):
        config = Config(str(config_file), environ={})
        assert config.get('simulation.replicas') == 50
        assert config.get('simulation.horizons') == [10, 100]
        assert config.get('simulation.threads') == 1
        assert config.get('gof.df_convention') == 'L'

    def test_environment_overrides_file(self, config_file):
        config = Config(str(config_file), environ={ENV_THREADS: '4', ENV_SEED: '0x10'})
        assert config.get('simulation.threads') == 4
        assert config.get('simulation.seed') == 16

    def test_bad_environment_value_is_ignored(self, config_file):
        config = Config(str(config_file), environ={ENV_THREADS: 'many', ENV_SEED: ''})
        assert config.get('simulation.threads') == 1
        assert config.get('simulation.seed') == 20200223

    def test_invalid_values_fall_back(self, tmp_path):
        path = tmp_path / 'bad.yaml'
        path.write_text(yaml.safe_dump({
            'simulation': {'replicas': 'lots', 'threads': -3, 'record': 'late_window'},
            'gof': {'df_convention': 'L+1', 'quantile_level': 1.5},
            'logging': {'level': 'CHATTY'},
        }))
        config = Config(str(path), environ={})
        assert config.get('simulation.replicas') == 1000
        assert config.get('simulation.threads') == 1
        assert config.get('gof.df_convention') == 'L_minus_1'
        assert config.get('simulation.record') == ['late_window']
        assert config.get('gof.quantile_level') == 0.95
        assert config.get('logging.level') == 'INFO'

    def test_unreadable_yaml_uses_defaults(self, tmp_path):
        path = tmp_path / 'broken.yaml'
        path.write_text('simulation: [unclosed\n')
        config = Config(str(path), environ={})
        assert config.get('simulation.replicas') == 1000

    def test_get_with_default(self, config_file):
        config = Config(str(config_file), environ={})
        assert config.get('simulation.missing', 'x') == 'x'
        assert config.get('simulation.replicas.deeper', 7) == 7

    def test_get_section_is_a_copy(self, config_file):
        config = Config(str(config_file), environ={})
        section = config.get_section('simulation')
        section['replicas'] = 1
        assert config.get('simulation.replicas') == 50

    def test_resolve_path_is_relative_to_config(self, config_file):
        config = Config(str(config_file), environ={})
        assert config.resolve_path(config.get('output.directory')) == config_file.parent.resolve() / 'results'

    def test_update_and_save(self, config_file, tmp_path):
        config = Config(str(config_file), environ={})
        config.update({'simulation': {'replicas': 5}})
        target = tmp_path / 'saved.yaml'
        config.save(str(target))
        reloaded = Config(str(target), environ={})
        assert reloaded.get('simulation.replicas') == 5
        assert reloaded.get('simulation.horizons') == [10, 100]
        for section in ('simulation', 'gof', 'output'):
            assert reloaded.get_section(section) == config.get_section(section)

    def test_record_can_be_emptied(self, tmp_path):
        path = tmp_path / 'quiet.yaml'
        path.write_text(yaml.safe_dump({'simulation': {'record': []}}))
        config = Config(str(path), environ={})
        assert config.get('simulation.record') == []
