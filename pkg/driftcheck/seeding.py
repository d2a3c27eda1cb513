"""
SplitMix64 随机流。

SplitMix64 是计数器型生成器：第 i 个输出 = mix(seed + i·GAMMA)，因此可整段向量化生成。

分流规则：名为 name 的子流，其种子 = mix(parent_seed XOR key(name))，
其中 key(name) 为 name 的 UTF-8 字节做 blake2b（8 字节摘要）按小端解释的整数。
同一 (seed, name) 在任何平台上都得到同一序列。
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def name_key(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SplitMix64:
    """一个 SplitMix64 流。next_u64 / uniform 推进内部计数器。"""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._counter = 0

    def fork(self, name: str) -> "SplitMix64":
        return SplitMix64(mix64(self.seed ^ name_key(name)))

    def next_u64(self) -> int:
        self._counter += 1
        return mix64(self.seed + self._counter * GAMMA)

    def u64(self, n: int) -> np.ndarray:
        start = self._counter + 1
        self._counter += n
        # 起点在 Python int 里取模；数组上的 uint64 运算按 2^64 回绕
        base = np.uint64((self.seed + start * GAMMA) & MASK64)
        steps = np.arange(n, dtype=np.uint64) * np.uint64(GAMMA)
        return _mix64_array(steps + base)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """n 个 [low, high) 均匀分布的 float64，取高 53 位。"""
        bits = self.u64(n) >> np.uint64(11)
        unit = bits.astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * unit


def set_deterministic(seed: int) -> SplitMix64:
    """初始化 harness 的根随机流。环境指纹里的 seed 与确定性标记由 reportlog 记录。"""
    return SplitMix64(seed)


def determinism_flags() -> dict[str, str]:
    return {
        "prng": "splitmix64",
        "stream_split": "blake2b-8",
        "reduction_order": "fixed-per-backend",
        "nms_tiebreak": "simulated",
    }


__all__ = ["SplitMix64", "mix64", "name_key", "set_deterministic", "determinism_flags", "GAMMA", "MASK64"]
