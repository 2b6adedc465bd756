"""Tests for logging setup."""

import logging
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from logger import log_duration, resolve_level, setup_logging


@pytest.fixture
def restore_root():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    for handler in root.handlers:
        handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


class TestLogger:
    @pytest.mark.parametrize('name,verbose,expected', [
        ('INFO', False, logging.INFO),
        ('warning', False, logging.WARNING),
        ('CHATTY', False, logging.INFO),
        ('ERROR', True, logging.DEBUG),
    ])
    def test_resolve_level(self, name, verbose, expected):
        assert resolve_level(name, verbose) == expected

    def test_console_goes_to_stderr(self, restore_root):
        setup_logging('WARNING')
        assert restore_root.level == logging.WARNING
        assert len(restore_root.handlers) == 1
        assert restore_root.handlers[0].stream is sys.stderr

    def test_file_handler(self, restore_root, tmp_path):
        log_file = tmp_path / 'logs' / 'grp-urn.log'
        setup_logging('INFO', str(log_file))
        logging.getLogger('grp-urn.test').info('seeded run')
        for handler in restore_root.handlers:
            handler.flush()
        assert 'seeded run' in log_file.read_text()

    def test_log_duration(self, caplog):
        log = logging.getLogger('grp-urn.timing')
        with caplog.at_level(logging.INFO, logger='grp-urn.timing'):
            with log_duration(log, 'simulate'):
                pass
        assert 'simulate finished in' in caplog.text

    def test_log_duration_silent_on_error(self, caplog):
        log = logging.getLogger('grp-urn.timing')
        with caplog.at_level(logging.INFO, logger='grp-urn.timing'):
            with pytest.raises(ValueError):
                with log_duration(log, 'estimate'):
                    raise ValueError('boom')
        assert 'finished' not in caplog.text
