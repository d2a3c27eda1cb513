"""
三层验证协议。

- Tier-1：固定形状输出上的张量接近度（默认全局 ∞-范数判定）与差异统计；
- Tier-2：在激活轨迹上定位最早发散的节点；
- Tier-3：任务级一致性（top-1/top-k、mIoU、检测 F1）；
- 失败归类：NONE / NUMERIC_DRIFT / ORDER_TIEBREAK / UNSUPPORTED_OP / RUNTIME_ERROR。

Nms 节点的输出长度依赖数据，只在 Tier-3 比较。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Collection, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from driftcheck.constants import TASK_THRESHOLD_DEFAULTS
from driftcheck.errors import GraphError, InvalidConfigError, ShapeError, UnsupportedOpError
from driftcheck.graph import GraphModel, OpKind
from driftcheck.metrics import detection_f1_rows, miou, topk_agreement
from driftcheck.tensor import DiffStats, Tensor, ToleranceSpec, allclose, compute_diff_stats

logger = logging.getLogger(__name__)


class FailureCategory(str, Enum):
    NONE = "NONE"
    NUMERIC_DRIFT = "NUMERIC_DRIFT"
    ORDER_TIEBREAK = "ORDER_TIEBREAK"
    UNSUPPORTED_OP = "UNSUPPORTED_OP"
    RUNTIME_ERROR = "RUNTIME_ERROR"


@dataclass(frozen=True)
class TaskThresholds:
    topk: int = TASK_THRESHOLD_DEFAULTS["topk"]
    topk_agreement: float = TASK_THRESHOLD_DEFAULTS["topk_agreement"]
    miou: float = TASK_THRESHOLD_DEFAULTS["miou"]
    detection_f1: float = TASK_THRESHOLD_DEFAULTS["detection_f1"]
    match_iou: float = TASK_THRESHOLD_DEFAULTS["match_iou"]

    def __post_init__(self) -> None:
        if isinstance(self.topk, bool) or not isinstance(self.topk, int) or self.topk < 1:
            raise InvalidConfigError("verification.task_thresholds.topk", f"must be an integer >= 1, got {self.topk!r}")
        for key in ("topk_agreement", "miou", "detection_f1", "match_iou"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise InvalidConfigError(f"verification.task_thresholds.{key}", f"must be in [0, 1], got {value!r}")


@dataclass(frozen=True)
class TaskMetrics:
    task: str
    passed: bool
    top1_match: Optional[bool] = None
    topk_agreement: Optional[float] = None
    miou: Optional[float] = None
    detection_f1: Optional[float] = None


@dataclass(frozen=True)
class Tier1Result:
    stats: DiffStats
    passed: bool
    mode: str


@dataclass(frozen=True)
class Divergence:
    node_id: str
    node_index: int
    # 两侧形状不同（如 Nms 保留数不同）时为 None
    max_abs_diff: Optional[float]


@dataclass(frozen=True)
class VerificationReport:
    status: str
    taxonomy: FailureCategory
    tier1: Optional[Tier1Result] = None
    tier2: Optional[Divergence] = None
    tier3: Optional[TaskMetrics] = None
    error: Optional[BaseException] = None


# ---------------------------------------------------------------------------
# Tier-1 / Tier-2
# ---------------------------------------------------------------------------


def tier1_compare(
    ref_outputs: Sequence[Tensor],
    tgt_outputs: Sequence[Tensor],
    tol: ToleranceSpec,
    mode: str = "eq1",
) -> Tuple[DiffStats, bool]:
    """逐输出比较；统计量取各输出的最坏情况，全部输出都接近才算通过。"""
    if len(ref_outputs) != len(tgt_outputs):
        raise ShapeError(f"reference produced {len(ref_outputs)} outputs, target produced {len(tgt_outputs)}")
    if not ref_outputs:
        raise ShapeError("no fixed-shape outputs to compare")
    combined: Optional[DiffStats] = None
    passed = True
    for ref, tgt in zip(ref_outputs, tgt_outputs):
        stats = compute_diff_stats(ref, tgt)
        passed = allclose(ref, tgt, tol, mode) and passed
        combined = stats if combined is None else combined.combine(stats)
    assert combined is not None
    return combined, passed


def tier2_localize(
    ref_activations: Mapping[str, Tensor],
    tgt_activations: Mapping[str, Tensor],
    tol: ToleranceSpec,
    mode: str = "eq1",
) -> Optional[Divergence]:
    """按 ref 轨迹的拓扑顺序找第一个不满足接近度的节点；都满足时返回 None。"""
    if list(ref_activations) != list(tgt_activations):
        raise GraphError("activation traces cover different node sets")
    for index, node_id in enumerate(ref_activations):
        ref = ref_activations[node_id]
        tgt = tgt_activations[node_id]
        if ref.shape != tgt.shape:
            return Divergence(node_id, index, None)
        if ref.numel == 0 or allclose(ref, tgt, tol, mode):
            continue
        return Divergence(node_id, index, compute_diff_stats(ref, tgt).max_abs_diff)
    return None


# ---------------------------------------------------------------------------
# Tier-3
# ---------------------------------------------------------------------------


def nms_outputs(model: GraphModel) -> List[str]:
    return [name for name in model.outputs if (p := model.producer(name)) is not None and p.op is OpKind.Nms]


def fixed_shape_outputs(model: GraphModel) -> List[str]:
    dynamic = set(nms_outputs(model))
    return [name for name in model.outputs if name not in dynamic]


def _rows(samples: Sequence[Mapping[str, Tensor]], name: str) -> np.ndarray:
    arrays = [s[name].array for s in samples]
    return np.concatenate([a.reshape(-1, a.shape[-1]) for a in arrays], axis=0)


def _labels(samples: Sequence[Mapping[str, Tensor]], name: str, is_label_map: bool) -> np.ndarray:
    arrays = [s[name].array for s in samples]
    if not is_label_map:
        arrays = [np.argmax(a, axis=1) for a in arrays]
    return np.concatenate([a.ravel() for a in arrays])


def tier3_task(
    model: GraphModel,
    ref_samples: Sequence[Mapping[str, Tensor]],
    tgt_samples: Sequence[Mapping[str, Tensor]],
    thresholds: TaskThresholds = TaskThresholds(),
) -> TaskMetrics:
    """
    按模型任务计算任务级一致性。每个样本一份输出映射。

    classification：首个输出的每一行做 top-1 / top-k，要求全部 top-1 一致且 top-k 均值达标；
    segmentation：首个输出视作标签图（非 ArgmaxChannel 输出时先沿通道取 argmax）；
    detection：所有 Nms 输出上的 F1 均值。
    """
    if len(ref_samples) != len(tgt_samples):
        raise ShapeError(f"{len(ref_samples)} reference samples vs {len(tgt_samples)} target samples")
    task = model.task
    if task == "classification":
        name = model.outputs[0]
        ref, tgt = _rows(ref_samples, name), _rows(tgt_samples, name)
        if ref.shape != tgt.shape:
            raise ShapeError(f"classification outputs differ: {list(ref.shape)} vs {list(tgt.shape)}")
        k = min(thresholds.topk, ref.shape[1])
        results = [topk_agreement(r, t, k) for r, t in zip(ref, tgt)]
        top1 = all(match for match, _ in results)
        frac = float(np.mean([f for _, f in results]))
        return TaskMetrics(
            task=task, passed=top1 and frac >= thresholds.topk_agreement, top1_match=top1, topk_agreement=frac
        )

    if task == "segmentation":
        name = model.outputs[0]
        producer = model.producer(name)
        is_label_map = producer is not None and producer.op is OpKind.ArgmaxChannel
        ref, tgt = _labels(ref_samples, name, is_label_map), _labels(tgt_samples, name, is_label_map)
        num_classes = int(max(ref.max(initial=0), tgt.max(initial=0))) + 1
        score = miou(ref, tgt, num_classes)
        return TaskMetrics(task=task, passed=score >= thresholds.miou, miou=score)

    names = nms_outputs(model)
    if not names:
        raise GraphError(f"detection model {model.name!r} has no Nms output")
    scores = [
        detection_f1_rows(r[name].array, t[name].array, thresholds.match_iou)
        for r, t in zip(ref_samples, tgt_samples)
        for name in names
    ]
    f1 = float(np.mean(scores))
    return TaskMetrics(task=task, passed=f1 >= thresholds.detection_f1, detection_f1=f1)


# ---------------------------------------------------------------------------
# 失败归类
# ---------------------------------------------------------------------------


def classify_failure(
    status: str,
    tier1: Optional[Tier1Result] = None,
    tier2: Optional[Divergence] = None,
    tier3: Optional[TaskMetrics] = None,
    error: Optional[BaseException] = None,
    fallback_nodes: Collection[str] = (),
    sort_retry: Optional[Callable[[], bool]] = None,
    localize: Optional[Callable[[], Optional[Divergence]]] = None,
) -> FailureCategory:
    """
    归类顺序：执行异常 > PASS > 回退节点处首次发散 > 检测平局（预排序重跑后通过） > 数值漂移。

    sort_retry 只在检测任务 Tier-3 失败时调用，返回两侧都开启 pre_nms_sort 后 Tier-3 是否通过。
    localize 在没有 Tier-2 结果但目标端发生过回退时调用，补做一次定位（未采集中间激活时用）。
    """
    if error is not None:
        return FailureCategory.UNSUPPORTED_OP if isinstance(error, UnsupportedOpError) else FailureCategory.RUNTIME_ERROR
    if status == "PASS":
        return FailureCategory.NONE
    if status == "ERROR":
        return FailureCategory.RUNTIME_ERROR
    if tier2 is None and fallback_nodes and localize is not None:
        tier2 = localize()
    if tier2 is not None and tier2.node_id in fallback_nodes:
        return FailureCategory.UNSUPPORTED_OP
    if tier3 is not None and not tier3.passed and tier3.task == "detection" and sort_retry is not None:
        if sort_retry():
            return FailureCategory.ORDER_TIEBREAK
    return FailureCategory.NUMERIC_DRIFT


def decide_status(tier1: Optional[Tier1Result], tier3: Optional[TaskMetrics], error: Optional[BaseException]) -> str:
    if error is not None or tier1 is None:
        return "ERROR"
    if tier1.passed and (tier3 is None or tier3.passed):
        return "PASS"
    return "FAIL"


def build_report(
    tier1: Optional[Tier1Result] = None,
    tier2: Optional[Divergence] = None,
    tier3: Optional[TaskMetrics] = None,
    error: Optional[BaseException] = None,
    fallback_nodes: Collection[str] = (),
    sort_retry: Optional[Callable[[], bool]] = None,
    localize: Optional[Callable[[], Optional[Divergence]]] = None,
) -> VerificationReport:
    status = decide_status(tier1, tier3, error)
    taxonomy = classify_failure(status, tier1, tier2, tier3, error, fallback_nodes, sort_retry, localize)
    if status != "PASS":
        logger.debug("verification %s: taxonomy=%s", status, taxonomy.value)
    return VerificationReport(status=status, taxonomy=taxonomy, tier1=tier1, tier2=tier2, tier3=tier3, error=error)


__all__ = [
    "FailureCategory",
    "TaskThresholds",
    "TaskMetrics",
    "Tier1Result",
    "Divergence",
    "VerificationReport",
    "tier1_compare",
    "tier2_localize",
    "tier3_task",
    "nms_outputs",
    "fixed_shape_outputs",
    "classify_failure",
    "decide_status",
    "build_report",
]
