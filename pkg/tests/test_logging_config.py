import logging
import logging.handlers

import pytest

from driftcheck.errors import ConfigParseError, InvalidConfigError
from driftcheck.logging_config import SETTINGS_ENV, find_settings_file, setup_logging


@pytest.fixture(autouse=True)
def _restore_root():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for h in root.handlers[:]:
        root.removeHandler(h)
        h.close()
    for h in handlers:
        root.addHandler(h)
    root.setLevel(level)


def test_lookup_order(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SETTINGS_ENV, raising=False)
    assert find_settings_file() is None
    local = tmp_path / "driftcheck.yaml"
    local.write_text("logging: {}\n", encoding="utf-8")
    assert find_settings_file() == tmp_path / "driftcheck.yaml"
    other = tmp_path / "other.yaml"
    other.write_text("logging: {}\n", encoding="utf-8")
    monkeypatch.setenv(SETTINGS_ENV, str(other))
    assert find_settings_file() == other
    with pytest.raises(FileNotFoundError):
        find_settings_file(tmp_path / "missing.yaml")


def test_console_only_by_default(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SETTINGS_ENV, raising=False)
    setup_logging(verbosity=1)
    setup_logging(verbosity=1)
    root = logging.getLogger()
    assert len(root.handlers) == 1
    assert root.handlers[0].level == logging.INFO


def test_rotating_file_handler(tmp_path):
    settings = tmp_path / "s.yaml"
    log_file = tmp_path / "logs" / "driftcheck.log"
    settings.write_text(
        f"logging:\n  level: DEBUG\n  file: {log_file}\n  rotation: {{type: time, backup_count: 3}}\n",
        encoding="utf-8",
    )
    setup_logging(settings)
    handlers = logging.getLogger().handlers
    timed = [h for h in handlers if isinstance(h, logging.handlers.TimedRotatingFileHandler)]
    assert len(timed) == 1
    assert timed[0].backupCount == 3
    logging.getLogger("driftcheck.test").debug("hello")
    timed[0].flush()
    assert "hello" in log_file.read_text(encoding="utf-8")


def test_bad_settings(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("logging: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigParseError):
        setup_logging(bad)
    bad.write_text("logging:\n  file: x.log\n  rotation: {type: weekly}\n", encoding="utf-8")
    with pytest.raises(InvalidConfigError):
        setup_logging(bad)
