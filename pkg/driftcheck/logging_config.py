"""
harness 日志：从 driftcheck.yaml 的 logging 段读取配置。

查找顺序：显式路径（--settings）> 环境变量 DRIFTCHECK_SETTINGS > 当前目录 driftcheck.yaml。
未找到时只配置控制台，级别 WARNING；-v 提到 INFO，-vv 提到 DEBUG。
"""

from __future__ import annotations

import logging
import logging.handlers
import os
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from driftcheck.errors import ConfigParseError, InvalidConfigError

SETTINGS_ENV = "DRIFTCHECK_SETTINGS"
SETTINGS_FILE = "driftcheck.yaml"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

_VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def find_settings_file(explicit_path: Optional[Union[str, Path]] = None) -> Optional[Path]:
    if explicit_path:
        path = Path(explicit_path).expanduser()
        if not path.is_file():
            raise FileNotFoundError(f"settings file not found: {explicit_path}")
        return path
    env = os.environ.get(SETTINGS_ENV, "").strip()
    if env:
        path = Path(env).expanduser()
        if not path.is_file():
            raise FileNotFoundError(f"{SETTINGS_ENV} points to a missing file: {env}")
        return path
    path = Path.cwd() / SETTINGS_FILE
    return path if path.is_file() else None


def load_logging_settings(path: Optional[Path]) -> Mapping[str, Any]:
    if path is None:
        return {}
    try:
        with path.open("r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigParseError(str(path), f"malformed YAML: {e}") from e
    if not isinstance(raw, Mapping):
        raise ConfigParseError(str(path), "top level must be a mapping")
    cfg = raw.get("logging") or {}
    if not isinstance(cfg, Mapping):
        raise InvalidConfigError("logging", "must be a mapping")
    return cfg


def _file_handler(path: Path, rotation: Mapping[str, Any]) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    rtype = str(rotation.get("type") or "size").lower()
    if rtype == "time":
        handler = logging.handlers.TimedRotatingFileHandler(
            str(path),
            when=rotation.get("when") or "midnight",
            interval=int(rotation.get("interval") or 1),
            backupCount=int(rotation.get("backup_count") or 30),
            encoding="utf-8",
        )
        handler.suffix = "%Y-%m-%d"
        return handler
    if rtype != "size":
        raise InvalidConfigError("logging.rotation.type", f"must be 'size' or 'time', got {rtype!r}")
    return logging.handlers.RotatingFileHandler(
        str(path),
        maxBytes=int(rotation.get("max_bytes") or 10 * 1024 * 1024),
        backupCount=int(rotation.get("backup_count") or 5),
        encoding="utf-8",
    )


def setup_logging(settings_path: Optional[Union[str, Path]] = None, verbosity: int = 0) -> None:
    """
    配置根 logger：控制台 handler，外加可选的滚动文件 handler。

    :param settings_path: 显式的 driftcheck.yaml 路径
    :param verbosity: -v 的个数；控制台级别取它与配置 level 中更详细的那个
    """
    cfg = load_logging_settings(find_settings_file(settings_path))

    level_name = str(cfg.get("level") or "WARNING").upper()
    file_level = getattr(logging, level_name, logging.WARNING)
    console_level = min(file_level, _VERBOSITY_LEVELS.get(verbosity, logging.DEBUG))

    root = logging.getLogger()
    root.setLevel(min(file_level, console_level))
    # 重复调用（测试里多次跑 CLI）时不叠加 handler
    for h in root.handlers[:]:
        root.removeHandler(h)

    fmt = logging.Formatter(LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")
    console = logging.StreamHandler()
    console.setLevel(console_level)
    console.setFormatter(fmt)
    root.addHandler(console)

    log_file = cfg.get("file") or ""
    log_file = log_file.strip() if isinstance(log_file, str) else ""
    if log_file:
        handler = _file_handler(Path(log_file).resolve(), cfg.get("rotation") or {})
        handler.setLevel(file_level)
        handler.setFormatter(fmt)
        root.addHandler(handler)


__all__ = ["SETTINGS_ENV", "SETTINGS_FILE", "LOG_FORMAT", "find_settings_file", "load_logging_settings", "setup_logging"]
