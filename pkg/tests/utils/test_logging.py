"""Tests for logging setup and progress reporting."""

import logging

import pytest

from lifeseq.utils.logging import PACKAGE_LOGGER, ProgressLogger, get_logger, setup_logging


@pytest.mark.unit
class TestSetupLogging:
    """Test suite for logger configuration."""

    def test_invalid_level(self):
        with pytest.raises(ValueError, match="Invalid log level"):
            setup_logging("LOUD")

    def test_level_and_handlers(self, temp_dir):
        log_file = temp_dir / "logs" / "run.log"
        logger = setup_logging("debug", log_file=str(log_file), console=False)
        assert logger.name == PACKAGE_LOGGER
        assert logger.level == logging.DEBUG
        assert len(logger.handlers) == 1
        get_logger("training").debug("written to file")
        for handler in logger.handlers:
            handler.flush()
        assert "written to file" in log_file.read_text()
        setup_logging("INFO", console=False)

    def test_child_loggers(self):
        assert get_logger().name == "lifeseq"
        assert get_logger("causal").name == "lifeseq.causal"


@pytest.mark.unit
class TestProgressLogger:
    """Test suite for loop progress messages."""

    def test_messages(self, caplog):
        caplog.set_level(logging.INFO, logger=PACKAGE_LOGGER)
        progress = ProgressLogger()
        progress.start(2, "Epochs")
        progress.step("first")
        progress.step()
        progress.complete("Done")
        messages = [r.getMessage() for r in caplog.records]
        assert messages == ["Epochs: 0/2", "Epochs: 1/2 (first)", "Epochs: 2/2", "Done: 2/2"]

    def test_every_n_steps(self, caplog):
        caplog.set_level(logging.INFO, logger=PACKAGE_LOGGER)
        progress = ProgressLogger(every=3)
        progress.start(7, "Bootstrap")
        for _ in range(7):
            progress.step()
        messages = [r.getMessage() for r in caplog.records]
        assert messages == ["Bootstrap: 0/7", "Bootstrap: 3/7", "Bootstrap: 6/7", "Bootstrap: 7/7"]
