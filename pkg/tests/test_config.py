import logging
import sys

import pytest
from pydantic import ValidationError

from robustfair.config import Settings, configure_logging, get_settings


class TestSettings:
    """Defaults and ROBUSTFAIR_* overrides"""

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("ROBUSTFAIR_SEED", raising=False)
        settings = Settings(_env_file=None)
        assert settings.seed == 0
        assert settings.json_indent == 2
        assert settings.max_iters == 5000
        assert settings.membership_tolerance == pytest.approx(1e-7)
        assert settings.permutation_enumeration_limit == 7

    def test_environment_override(self, monkeypatch):
        monkeypatch.setenv("ROBUSTFAIR_SEED", "13")
        monkeypatch.setenv("ROBUSTFAIR_SOLVER_TOLERANCE", "1e-4")
        settings = get_settings()
        assert settings.seed == 13
        assert settings.solver_tolerance == pytest.approx(1e-4)

    def test_cached(self):
        assert get_settings() is get_settings()

    def test_invalid_value(self, monkeypatch):
        monkeypatch.setenv("ROBUSTFAIR_MAX_ITERS", "0")
        with pytest.raises(ValidationError):
            Settings(_env_file=None)


class TestLogging:
    def test_handler_writes_to_stderr(self):
        configure_logging("debug")
        logger = logging.getLogger("robustfair")
        assert logger.level == logging.DEBUG
        assert len(logger.handlers) == 1
        assert logger.handlers[0].stream is sys.stderr
        assert not logger.propagate

    def test_level_from_settings(self, monkeypatch):
        monkeypatch.setenv("ROBUSTFAIR_LOG_LEVEL", "error")
        configure_logging()
        assert logging.getLogger("robustfair").level == logging.ERROR

    def test_reconfiguring_does_not_stack_handlers(self):
        configure_logging("info")
        configure_logging("info")
        assert len(logging.getLogger("robustfair").handlers) == 1
