"""
Tier-3 任务指标：后端之间的一致性，而不是对真值的准确率。

- iou / detection_f1：检测框集合的对称贪心匹配；
- topk_agreement：分类 top-1 / top-k 一致性；
- miou：分割标签掩码的平均 IoU。
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from driftcheck.errors import InvalidConfigError, ShapeError

Box = Sequence[float]


def iou(box_a: Box, box_b: Box) -> float:
    """(x1,y1,x2,y2) 框的交并比；并集面积为 0 时返回 0。"""
    ax1, ay1, ax2, ay2 = (float(v) for v in box_a)
    bx1, by1, bx2, by2 = (float(v) for v in box_b)
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def _as_vector(x: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{what} must be a 1-D vector, got shape {list(arr.shape)}")
    return arr


def _top_indices(logits: np.ndarray, k: int) -> np.ndarray:
    # 稳定排序：值相同时下标小的在前
    return np.argsort(-logits, kind="stable")[:k]


def topk_agreement(ref_logits: np.ndarray, tgt_logits: np.ndarray, k: int = 5) -> Tuple[bool, float]:
    """返回 (top1 是否一致, |top-k 交集| / k)。"""
    ref = _as_vector(ref_logits, "ref logits")
    tgt = _as_vector(tgt_logits, "tgt logits")
    if ref.shape != tgt.shape:
        raise ShapeError(f"logit vectors differ in length: {ref.size} vs {tgt.size}")
    if k < 1 or k > ref.size:
        raise InvalidConfigError("verification.task_thresholds.topk", f"k must be in [1, {ref.size}], got {k}")
    top1 = int(np.argmax(ref)) == int(np.argmax(tgt))
    shared = set(_top_indices(ref, k).tolist()) & set(_top_indices(tgt, k).tolist())
    return top1, len(shared) / k


def _as_labels(mask: np.ndarray, num_classes: int, what: str) -> np.ndarray:
    arr = np.asarray(mask, dtype=np.float64)
    if arr.size and (np.any(arr != np.round(arr)) or arr.min() < 0 or arr.max() >= num_classes):
        raise InvalidConfigError("num_classes", f"{what} has labels outside [0, {num_classes})")
    return arr.astype(np.int64)


def miou(ref_mask: np.ndarray, tgt_mask: np.ndarray, num_classes: int) -> float:
    """
    按类求 IoU，再对两张掩码中出现过的类取平均；两边都不出现的类不计入。

    两张空掩码（或没有任何类出现）记为 1.0。
    """
    ref = _as_labels(ref_mask, num_classes, "ref mask")
    tgt = _as_labels(tgt_mask, num_classes, "tgt mask")
    if ref.shape != tgt.shape:
        raise ShapeError(f"mask shapes differ: {list(ref.shape)} vs {list(tgt.shape)}")
    scores = []
    for c in range(num_classes):
        in_ref = ref == c
        in_tgt = tgt == c
        union = int(np.count_nonzero(in_ref | in_tgt))
        if union == 0:
            continue
        scores.append(np.count_nonzero(in_ref & in_tgt) / union)
    if not scores:
        return 1.0
    return float(np.mean(scores))


def detection_f1(
    ref_boxes: np.ndarray,
    ref_scores: np.ndarray,
    tgt_boxes: np.ndarray,
    tgt_scores: np.ndarray,
    match_iou: float = 0.5,
) -> float:
    """
    对称贪心匹配的 F1。

    按 ref 分数降序（同分按下标），每个 ref 框匹配 IoU 最高、且 >= match_iou 的未匹配 tgt 框；
    F1 = 2·matches / (|ref| + |tgt|)，两边都为空时为 1.0。
    """
    ref_b = np.asarray(ref_boxes, dtype=np.float64).reshape(-1, 4)
    tgt_b = np.asarray(tgt_boxes, dtype=np.float64).reshape(-1, 4)
    ref_s = np.asarray(ref_scores, dtype=np.float64).ravel()
    if ref_s.size != len(ref_b) or np.asarray(tgt_scores).size != len(tgt_b):
        raise ShapeError("boxes and scores differ in count")
    total = len(ref_b) + len(tgt_b)
    if total == 0:
        return 1.0

    matched = np.zeros(len(tgt_b), dtype=bool)
    matches = 0
    for i in np.argsort(-ref_s, kind="stable"):
        best_j, best_iou = -1, -1.0
        for j in range(len(tgt_b)):
            if matched[j]:
                continue
            v = iou(ref_b[i], tgt_b[j])
            if v >= match_iou and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            matched[best_j] = True
            matches += 1
    return 2.0 * matches / total


def detection_f1_rows(ref_rows: np.ndarray, tgt_rows: np.ndarray, match_iou: float = 0.5) -> float:
    """Nms 输出行 [x1,y1,x2,y2,score] 上的 detection_f1。"""
    ref = np.asarray(ref_rows, dtype=np.float64).reshape(-1, 5)
    tgt = np.asarray(tgt_rows, dtype=np.float64).reshape(-1, 5)
    return detection_f1(ref[:, :4], ref[:, 4], tgt[:, :4], tgt[:, 4], match_iou)


__all__ = ["iou", "topk_agreement", "miou", "detection_f1", "detection_f1_rows"]
