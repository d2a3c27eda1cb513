"""
贪心 NMS 与确定性的预排序适配器。

"unstable" 策略不是真正的非确定性：同分候选按输入顺序的逆序访问，
用可复现的方式模拟不同后端对平局的不同处理。
"""

from __future__ import annotations

from typing import List

import numpy as np

from driftcheck.constants import NMS_ORDERS
from driftcheck.errors import InvalidConfigError, ShapeError
from driftcheck.metrics import iou


def _check_candidates(boxes: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(boxes, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != 4:
        raise ShapeError(f"boxes must be (N,4), got {list(b.shape)}")
    if s.shape != (b.shape[0],):
        raise ShapeError(f"scores must be ({b.shape[0]},), got {list(s.shape)}")
    if np.any(b[:, 2] < b[:, 0]) or np.any(b[:, 3] < b[:, 1]):
        raise ShapeError("boxes must satisfy x2 >= x1 and y2 >= y1")
    return b, s


def _full_key_order(b: np.ndarray, s: np.ndarray) -> np.ndarray:
    # lexsort 以最后一个键为主键
    return np.lexsort((np.arange(len(s)), b[:, 1], b[:, 0], -s))


def pre_nms_sort(boxes: np.ndarray, scores: np.ndarray) -> List[int]:
    """按 (score 降序, x1 升序, y1 升序, 原下标升序) 的全序返回排列。"""
    b, s = _check_candidates(boxes, scores)
    return _full_key_order(b, s).tolist()


def _tie_groups(order: np.ndarray, keys: np.ndarray) -> List[np.ndarray]:
    """把已排序的 order 切成键完全相同的连续段。"""
    if len(order) == 0:
        return []
    k = keys[order]
    starts = np.flatnonzero(np.any(k[1:] != k[:-1], axis=1)) + 1
    return np.split(order, starts)


def visit_order(
    boxes: np.ndarray,
    scores: np.ndarray,
    order_policy: str = "stable",
    pre_sorted: bool = False,
) -> List[int]:
    """
    贪心访问顺序：分数降序；平局组内 stable 保持输入顺序，unstable 逆序。

    pre_sorted 时输入顺序先换成 pre_nms_sort 的结果，平局定义为 (score, x1, y1) 全键相同。
    """
    if order_policy not in NMS_ORDERS:
        raise InvalidConfigError("options.nms_order", f"must be one of {NMS_ORDERS}, got {order_policy!r}")
    b, s = _check_candidates(boxes, scores)
    if pre_sorted:
        order = _full_key_order(b, s)
        keys = np.column_stack([s, b[:, 0], b[:, 1]])
    else:
        order = np.argsort(-s, kind="stable")
        keys = s[:, None]

    groups = _tie_groups(order, keys)
    if order_policy == "unstable":
        groups = [g[::-1] for g in groups]
    return np.concatenate(groups).tolist() if groups else []


def nms(
    boxes: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float,
    order_policy: str = "stable",
    pre_sorted: bool = False,
) -> List[int]:
    """返回按访问顺序保留的候选下标。IoU 严格大于阈值才抑制。"""
    if not 0.0 <= float(iou_threshold) <= 1.0:
        raise InvalidConfigError("iou_threshold", f"must be in [0, 1], got {iou_threshold!r}")
    b = np.asarray(boxes, dtype=np.float64)
    kept: List[int] = []
    suppressed = set()
    visit = visit_order(boxes, scores, order_policy, pre_sorted)
    for pos, i in enumerate(visit):
        if i in suppressed:
            continue
        kept.append(i)
        for j in visit[pos + 1 :]:
            if j not in suppressed and iou(b[i], b[j]) > iou_threshold:
                suppressed.add(j)
    return kept


__all__ = ["nms", "pre_nms_sort", "visit_order"]
