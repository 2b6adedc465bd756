"""Configuration management for the GRP urn toolkit."""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = 'grp-urn-config.yaml'

# The only two settings taken from the environment.
ENV_THREADS = 'GRP_URN_THREADS'
ENV_SEED = 'GRP_URN_SEED'


class Config:
    """Configuration manager: YAML file over built-in defaults, then environment."""

    def __init__(self, config_file: Optional[str] = None, environ: Optional[Dict[str, str]] = None):
        """Initialize configuration from YAML file or defaults."""
        self.config_path = _absolute(config_file or DEFAULT_CONFIG_FILE, Path.cwd())
        self.config_file = str(self.config_path)
        self._config_dir = self.config_path.parent

        self._defaults = self._get_default_config()
        self.config = self._load_config()
        self._apply_environment(os.environ if environ is None else environ)
        self._validate_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file."""
        config_path = self.config_path
        config = copy.deepcopy(self._defaults)

        if config_path.exists():
            try:
                with open(config_path, 'r') as f:
                    user_config = yaml.safe_load(f) or {}
                logger.info(f"Loaded configuration from {config_path}")
                self._deep_update(config, user_config)
            except Exception as e:
                logger.error(f"Failed to load config from {config_path}: {e}")
                logger.info("Using default configuration")
        else:
            logger.info(f"Config file {config_path} not found, using defaults")
        return config

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration."""
        return {
            'simulation': {
                'seed': 20200223,
                'replicas': 1000,
                'horizons': [1000, 10000],
                'threads': 1,
                'batch_size': 250,
                'step_budget': 2_000_000_000,
                'renormalize_every': 10_000,
                'chunk_size': 2048,
                'record': ['late_window'],
            },
            'gof': {
                'df_convention': 'L_minus_1',
                'pstar': 'pooled',
                'max_lag': 10,
                'quantile_level': 0.95,
                'bisection_xtol': 1e-12,
                'likelihood_grid': 200,
            },
            'data': {
                'covid_fixture': './data/covid_table3.csv',
                'covid_reference': './data/covid_table3_published.csv',
            },
            'output': {
                'directory': './output',
                'precision': 7,
            },
            'logging': {
                'level': 'INFO',
                'file': None,
            },
        }

    def _apply_environment(self, environ: Dict[str, str]):
        """Overlay GRP_URN_THREADS and GRP_URN_SEED."""
        sim = self.config.setdefault('simulation', {})
        for var, key in ((ENV_THREADS, 'threads'), (ENV_SEED, 'seed')):
            raw = environ.get(var)
            if raw is None or raw == '':
                continue
            try:
                sim[key] = int(raw, 0)
                logger.debug(f"{var} overrides simulation.{key} = {sim[key]}")
            except ValueError:
                logger.warning(f"Ignoring non-integer {var}={raw!r}")

    def _validate_config(self):
        """Validate configuration values."""
        sim = self.config.get('simulation', {})
        defaults = self._defaults['simulation']
        for key in ('replicas', 'threads', 'batch_size', 'renormalize_every', 'chunk_size'):
            try:
                sim[key] = max(1, int(sim.get(key, defaults[key])))
            except (TypeError, ValueError):
                logger.warning(f"Invalid simulation.{key} value; defaulting to {defaults[key]}")
                sim[key] = defaults[key]
        try:
            sim['seed'] = int(sim.get('seed', defaults['seed'])) & 0xFFFFFFFFFFFFFFFF
        except (TypeError, ValueError):
            logger.warning(f"Invalid simulation.seed; defaulting to {defaults['seed']}")
            sim['seed'] = defaults['seed']
        record = sim.get('record', defaults['record'])
        if not isinstance(record, list) or not all(isinstance(flag, str) for flag in record):
            logger.warning(f"Invalid simulation.record; defaulting to {defaults['record']}")
            sim['record'] = list(defaults['record'])

        gof = self.config.get('gof', {})
        if gof.get('df_convention') not in ('L', 'L_minus_1'):
            logger.warning("Invalid gof.df_convention, using 'L_minus_1'")
            gof['df_convention'] = 'L_minus_1'
        level = gof.get('quantile_level')
        if not isinstance(level, (int, float)) or not 0.0 < level < 1.0:
            logger.warning("Invalid gof.quantile_level, using 0.95")
            gof['quantile_level'] = 0.95

        log_config = self.config.get('logging', {})
        valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR']
        if log_config.get('level') not in valid_levels:
            logger.warning("Invalid logging level, using 'INFO'")
            log_config['level'] = 'INFO'

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key using dot notation."""
        value = self.config
        for k in key.split('.'):
            if isinstance(value, dict):
                value = value.get(k)
                if value is None:
                    return default
            else:
                return default
        return value

    def get_section(self, section: str) -> Dict[str, Any]:
        """Get entire configuration section."""
        if section in self.config:
            return copy.deepcopy(self.config[section])
        return copy.deepcopy(self._defaults.get(section, {}))

    def resolve_path(self, value: Union[str, Path]) -> Path:
        """Resolve paths relative to the configuration file location."""
        return _absolute(value, self._config_dir)

    def update(self, updates: Dict[str, Any]):
        """Update configuration with new values."""
        self._deep_update(self.config, updates)
        logger.info("Configuration updated")

    def _deep_update(self, base: dict, updates: dict):
        """Recursively merge update values into the base dictionary."""
        for key, value in updates.items():
            if isinstance(value, dict) and key in base and isinstance(base[key], dict):
                self._deep_update(base[key], value)
            else:
                base[key] = value

    def save(self, file_path: Optional[str] = None):
        """Save configuration to YAML file."""
        save_path = _absolute(file_path, self._config_dir) if file_path else self.config_path
        save_path.parent.mkdir(parents=True, exist_ok=True)

        with open(save_path, 'w') as f:
            yaml.dump(self.config, f, default_flow_style=False, sort_keys=False)

        logger.info(f"Configuration saved to {save_path}")


def _absolute(value: Union[str, Path], base: Path) -> Path:
    path = Path(value).expanduser()
    return (path if path.is_absolute() else base / path).resolve()
