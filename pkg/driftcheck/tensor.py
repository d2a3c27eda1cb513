"""
稠密张量与数值工具。

负责：
- Tensor（行主序，F32/F64，秩 <= 4）；
- 两种归约顺序（顺序累加 / 成对累加），每次加法后舍入到 F32；
- binary16 舍入模拟、per-channel normalize、bilinear resize（half-pixel 中心）；
- 差异统计与两种 closeness 判定（全局 ∞-范数 / 逐元素）。

差异统计一律在 F64 中累加，统计本身不能漂移。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Sequence, Union

import numpy as np

from driftcheck.constants import HALF_MAX
from driftcheck.errors import EmptyReductionError, InvalidConfigError, ShapeError

MAX_RANK = 4


class DType(str, Enum):
    F32 = "F32"
    F64 = "F64"

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(np.float32) if self is DType.F32 else np.dtype(np.float64)

    @classmethod
    def from_numpy(cls, dtype: Any) -> "DType":
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return cls.F32
        if dtype == np.float64:
            return cls.F64
        raise ShapeError(f"unsupported dtype {dtype}; only float32/float64 tensors exist")


@dataclass(frozen=True, eq=False)
class Tensor:
    """不可变的稠密张量。array 持有只读副本。"""

    array: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.array)
        DType.from_numpy(arr.dtype)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds maximum rank {MAX_RANK}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        arr = np.array(arr, copy=True, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)

    @classmethod
    def of(cls, values: Any, dtype: Union[DType, str] = DType.F32) -> "Tensor":
        return cls(np.asarray(values, dtype=DType(dtype).numpy))

    @property
    def dtype(self) -> DType:
        return DType.from_numpy(self.array.dtype)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(s) for s in self.array.shape)

    @property
    def rank(self) -> int:
        return self.array.ndim

    @property
    def numel(self) -> int:
        return int(self.array.size)

    def bitwise_equal(self, other: "Tensor") -> bool:
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and self.array.tobytes() == other.array.tobytes()
        )

    def __repr__(self) -> str:
        return f"Tensor(dtype={self.dtype.value}, shape={list(self.shape)})"


@dataclass(frozen=True)
class ToleranceSpec:
    atol: float = 1e-5
    rtol: float = 1e-5

    def __post_init__(self) -> None:
        if not (self.atol >= 0):
            raise InvalidConfigError("atol", f"must be >= 0, got {self.atol!r}")
        if not (self.rtol >= 0):
            raise InvalidConfigError("rtol", f"must be >= 0, got {self.rtol!r}")

    def threshold(self, ref_inf_norm: float) -> float:
        return self.atol + self.rtol * ref_inf_norm


@dataclass(frozen=True)
class DiffStats:
    max_abs_diff: float
    mae: float
    p95_abs_diff: float
    ref_inf_norm: float
    numel: int

    def combine(self, other: "DiffStats") -> "DiffStats":
        """多个输出的最坏情况：各统计量取最大，numel 累加。"""
        return DiffStats(
            max_abs_diff=max(self.max_abs_diff, other.max_abs_diff),
            mae=max(self.mae, other.mae),
            p95_abs_diff=max(self.p95_abs_diff, other.p95_abs_diff),
            ref_inf_norm=max(self.ref_inf_norm, other.ref_inf_norm),
            numel=self.numel + other.numel,
        )


def _check_same_shape(ref: Tensor, tgt: Tensor) -> None:
    if ref.shape != tgt.shape:
        raise ShapeError(f"shape mismatch: {list(ref.shape)} vs {list(tgt.shape)}")


def _abs_diff(ref: Tensor, tgt: Tensor) -> np.ndarray:
    return np.abs(ref.array.astype(np.float64) - tgt.array.astype(np.float64)).ravel()


def _inf_norm(x: Tensor) -> float:
    if x.numel == 0:
        return 0.0
    return float(np.max(np.abs(x.array.astype(np.float64))))


def nearest_rank_p95(sorted_values: np.ndarray) -> float:
    """最近秩 95 分位：第 ceil(0.95·n) 小的值（1-based），用整数运算避免浮点误差。"""
    n = int(sorted_values.size)
    rank = (95 * n + 99) // 100
    return float(sorted_values[max(rank, 1) - 1])


def compute_diff_stats(ref: Tensor, tgt: Tensor) -> DiffStats:
    _check_same_shape(ref, tgt)
    if ref.dtype != tgt.dtype:
        raise ShapeError(f"dtype mismatch: {ref.dtype.value} vs {tgt.dtype.value}")
    if ref.numel == 0:
        raise ShapeError("cannot compute diff statistics of empty tensors")

    diff = _abs_diff(ref, tgt)
    max_abs = float(diff.max())
    # 均值可能因舍入略超最大值，截断保持 mae <= max
    mae = min(float(diff.mean()), max_abs)
    return DiffStats(
        max_abs_diff=max_abs,
        mae=mae,
        p95_abs_diff=nearest_rank_p95(np.sort(diff)),
        ref_inf_norm=_inf_norm(ref),
        numel=ref.numel,
    )


def allclose_eq1(ref: Tensor, tgt: Tensor, tol: ToleranceSpec) -> bool:
    """全局 ∞-范数判定：max|ref−tgt| <= atol + rtol·max|ref|。"""
    _check_same_shape(ref, tgt)
    if ref.numel == 0:
        return True
    return float(_abs_diff(ref, tgt).max()) <= tol.threshold(_inf_norm(ref))


def allclose_elementwise(ref: Tensor, tgt: Tensor, tol: ToleranceSpec) -> bool:
    """逐元素判定：每个元素 |r−t| <= atol + rtol·|r|。"""
    _check_same_shape(ref, tgt)
    diff = _abs_diff(ref, tgt)
    bound = tol.atol + tol.rtol * np.abs(ref.array.astype(np.float64)).ravel()
    return bool(np.all(diff <= bound))


def allclose(ref: Tensor, tgt: Tensor, tol: ToleranceSpec, mode: str = "eq1") -> bool:
    if mode == "eq1":
        return allclose_eq1(ref, tgt, tol)
    if mode == "elementwise":
        return allclose_elementwise(ref, tgt, tol)
    raise InvalidConfigError("verification.mode", f"must be 'eq1' or 'elementwise', got {mode!r}")


# ---------------------------------------------------------------------------
# 归约
# ---------------------------------------------------------------------------


def _prepare_reduction(x: Any, axis: int, dtype: np.dtype) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 0 or arr.shape[axis] == 0:
        raise EmptyReductionError("cannot reduce an empty sequence")
    # 归约轴挪到最前并连续存放，逐项切片时访问连续内存
    return np.ascontiguousarray(np.moveaxis(arr, axis, 0))


def reduce_sequential(x: Any, axis: int = -1, dtype: Any = np.float32) -> np.ndarray:
    """沿 axis 从左到右累加，每次加法后舍入到 dtype。其余轴向量化。"""
    arr = _prepare_reduction(x, axis, np.dtype(dtype))
    acc = arr[0].copy()
    for k in range(1, arr.shape[0]):
        acc = acc + arr[k]
    return acc


def _pairwise(arr: np.ndarray) -> np.ndarray:
    n = arr.shape[0]
    if n == 1:
        return arr[0]
    mid = n // 2
    return _pairwise(arr[:mid]) + _pairwise(arr[mid:])


def reduce_pairwise(x: Any, axis: int = -1, dtype: Any = np.float32) -> np.ndarray:
    """沿 axis 做平衡二叉树累加（左半 n//2 个），每个部分和舍入到 dtype。"""
    arr = _prepare_reduction(x, axis, np.dtype(dtype))
    return _pairwise(arr)


def _scalar_values(values: Iterable[float], dtype: DType) -> np.ndarray:
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=dtype.numpy)
    return arr.ravel()


def sum_sequential(values: Iterable[float], accumulate_in: Union[DType, str] = DType.F32) -> float:
    dtype = DType(accumulate_in)
    return float(reduce_sequential(_scalar_values(values, dtype), dtype=dtype.numpy))


def sum_pairwise(values: Iterable[float], accumulate_in: Union[DType, str] = DType.F32) -> float:
    dtype = DType(accumulate_in)
    return float(reduce_pairwise(_scalar_values(values, dtype), dtype=dtype.numpy))


# ---------------------------------------------------------------------------
# 精度与预处理
# ---------------------------------------------------------------------------


def half_round_array(arr: np.ndarray) -> np.ndarray:
    """就近舍入到 binary16（ties-to-even），超出范围饱和到 ±65504，再存回 F32。"""
    clipped = np.clip(np.asarray(arr, dtype=np.float32), -HALF_MAX, HALF_MAX)
    return clipped.astype(np.float16).astype(np.float32)


def round_to_half_precision(x: Tensor) -> Tensor:
    if x.dtype is not DType.F32:
        raise ShapeError(f"round_to_half_precision expects an F32 tensor, got {x.dtype.value}")
    return Tensor(half_round_array(x.array))


def _channel_axis(rank: int) -> int:
    # (N,C,H,W) / (N,C) 通道在轴 1；(C,H,W) / (C,) 通道在轴 0
    if rank in (2, 4):
        return 1
    if rank in (1, 3):
        return 0
    raise ShapeError(f"normalize needs a channel dimension, got rank {rank}")


def normalize(x: Tensor, means: Sequence[float], stds: Sequence[float]) -> Tensor:
    """out[c,...] = (x[c,...] − means[c]) / stds[c]；秩 4 时通道轴为 1。"""
    if len(means) != len(stds):
        raise ShapeError(f"{len(means)} means but {len(stds)} stds")
    if any(float(s) == 0.0 for s in stds):
        raise InvalidConfigError("stds", "standard deviations must be nonzero")
    axis = _channel_axis(x.rank)
    channels = x.shape[axis]
    if channels != len(means):
        raise ShapeError(f"input has {channels} channels but {len(means)} means/stds were given")

    bshape = [1] * x.rank
    bshape[axis] = channels
    dtype = x.dtype.numpy
    mean = np.asarray(means, dtype=dtype).reshape(bshape)
    std = np.asarray(stds, dtype=dtype).reshape(bshape)
    return Tensor(((x.array - mean) / std).astype(dtype))


def _source_coords(out_size: int, in_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, src - i0


def bilinear_resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if arr.ndim != 4:
        raise ShapeError(f"bilinear_resize expects rank-4 (N,C,H,W) input, got rank {arr.ndim}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output extents must be >= 1, got {out_h}x{out_w}")
    h, w = arr.shape[2], arr.shape[3]
    if (out_h, out_w) == (h, w):
        return arr.copy()

    y0, y1, fy = _source_coords(out_h, h)
    x0, x1, fx = _source_coords(out_w, w)
    src = arr.astype(np.float64)
    fy = fy[:, None]
    fx = fx[None, :]
    top = src[:, :, y0[:, None], x0[None, :]] * (1.0 - fx) + src[:, :, y0[:, None], x1[None, :]] * fx
    bottom = src[:, :, y1[:, None], x0[None, :]] * (1.0 - fx) + src[:, :, y1[:, None], x1[None, :]] * fx
    out = top * (1.0 - fy) + bottom * fy
    return out.astype(arr.dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """双线性插值，align_corners=False：源坐标 = (dst + 0.5)·scale − 0.5，截断到有效范围。"""
    return Tensor(bilinear_resize_array(x.array, out_h, out_w))


def adjust_to_multiple(x: Tensor, m: int) -> Tensor:
    if x.rank != 4:
        raise ShapeError(f"adjust_to_multiple expects rank-4 input, got rank {x.rank}")
    if m < 1:
        raise InvalidConfigError("options.resize_multiple", f"must be >= 1, got {m}")
    _, _, h, w = x.shape
    nh = max(m, (h // m) * m)
    nw = max(m, (w // m) * m)
    if (nh, nw) == (h, w):
        return x
    return bilinear_resize(x, nh, nw)


def product(shape: Sequence[int]) -> int:
    return int(math.prod(int(s) for s in shape))


__all__ = [
    "DType",
    "Tensor",
    "ToleranceSpec",
    "DiffStats",
    "compute_diff_stats",
    "allclose_eq1",
    "allclose_elementwise",
    "allclose",
    "nearest_rank_p95",
    "reduce_sequential",
    "reduce_pairwise",
    "sum_sequential",
    "sum_pairwise",
    "half_round_array",
    "round_to_half_precision",
    "normalize",
    "bilinear_resize_array",
    "bilinear_resize",
    "adjust_to_multiple",
    "product",
]
