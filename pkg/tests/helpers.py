"""测试辅助函数（不是 fixture）。"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from driftcheck.seeding import SplitMix64
from driftcheck.tensor import Tensor

ROOT = Path(__file__).resolve().parents[1]
CONFIGS_DIR = ROOT / "configs"
FIXTURES_DIR = Path(__file__).resolve().parent / "fixtures"


def synthetic_input(seed: int, shape=(1, 3, 32, 32)) -> Tensor:
    """与 runner 对合成输入的生成方式一致（未做 normalize）。"""
    values = SplitMix64(seed).fork("input").uniform(int(np.prod(shape)))
    return Tensor(values.astype(np.float32).reshape(shape))
