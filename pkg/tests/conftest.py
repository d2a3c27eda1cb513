"""测试共用的模型、输入与配置文件工厂。"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Dict

import pytest
import yaml

from driftcheck.builders import build_synthetic_classifier, build_synthetic_detector, build_synthetic_segmenter
from tests.helpers import synthetic_input


@pytest.fixture
def classifier():
    return build_synthetic_classifier(5)


@pytest.fixture
def segmenter():
    return build_synthetic_segmenter(5)


@pytest.fixture
def detector():
    return build_synthetic_detector(5)


@pytest.fixture
def tie_detector():
    return build_synthetic_detector(5, num_candidates=16, tie_fixture=True)


@pytest.fixture
def image():
    return synthetic_input(11)


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    """把 dict 写成 tmp_path 下的 YAML 运行配置，返回路径。"""

    def _write(name: str = "run.yaml", **doc: Any) -> Path:
        body: Dict[str, Any] = {
            "source": "builtin",
            "model": "classifier",
            "inputs": [{"shape": [1, 3, 32, 32], "seed": 11}],
            "options": {"repeats": 1},
        }
        body.update(doc)
        path = tmp_path / name
        path.write_text(yaml.safe_dump(body, sort_keys=False), encoding="utf-8")
        return path

    return _write
