"""
内置合成模型：classifier / segmenter / detector。

权重取自 SplitMix64 子流（按 initializer 名分流），均匀分布于 [−1/√fan_in, 1/√fan_in]。
给定 (seed, BUILDER_VERSION) 时逐位确定。
"""

from __future__ import annotations

import math
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from driftcheck.constants import (
    BUILTIN_MODELS,
    DEFAULT_IOU_THRESHOLD,
    NUM_CLASSES_CLASSIFICATION,
    NUM_CLASSES_SEGMENTATION,
    NUM_DETECTION_CANDIDATES,
)
from driftcheck.errors import InvalidConfigError
from driftcheck.graph import GraphModel, Node, OpKind, finalize_model
from driftcheck.seeding import SplitMix64
from driftcheck.tensor import Tensor

BUILDER_VERSION = 1

DEFAULT_INPUT_SHAPE = (1, 3, 32, 32)

# 平局夹具：A、B 分数完全相同且互相抑制（IoU 0.6），C 只与 B 重叠（IoU 0.6，与 A 为 1/3）。
# 先取 A 保留 {A, C}；先取 B 只保留 {B}。
TIE_FIXTURE_BOXES = {
    3: (10.0, 10.0, 50.0, 50.0),  # A
    7: (20.0, 10.0, 60.0, 50.0),  # B
    11: (30.0, 10.0, 70.0, 50.0),  # C
}
TIE_FIXTURE_SCORES = {3: 10.0, 7: 10.0, 11: 9.0}
# 其余候选框排成互不重叠的网格，最多容纳 61 个
TIE_FIXTURE_MAX_CANDIDATES = 64

# 框坐标的仿射映射：coord = 50·raw + 50，再夹到 [0, 100]
BOX_SCALE = 50.0
BOX_SHIFT = 50.0
BOX_MAX = 100.0


class _Graph:
    """构图辅助：按顺序追加节点，节点 id 即输出名。"""

    def __init__(self, seed: int):
        self.root = SplitMix64(seed)
        self.nodes: List[Node] = []
        self.initializers: Dict[str, Tensor] = {}

    def param(self, name: str, shape: Sequence[int], fan_in: int) -> str:
        bound = 1.0 / math.sqrt(fan_in)
        values = self.root.fork(name).uniform(int(np.prod(shape)), -bound, bound)
        self.initializers[name] = Tensor(values.astype(np.float32).reshape(tuple(shape)))
        return name

    def const(self, name: str, values: np.ndarray) -> str:
        self.initializers[name] = Tensor(np.asarray(values, dtype=np.float32))
        return name

    def node(self, out: str, op: OpKind, inputs: Sequence[str], **attrs: Any) -> str:
        self.nodes.append(Node(id=out, op=op, inputs=tuple(inputs), output=out, attrs=attrs))
        return out

    def conv(self, out: str, x: str, c_in: int, c_out: int, k: int = 3, pad: int = 1) -> str:
        w = self.param(f"{out}.weight", (c_out, c_in, k, k), c_in * k * k)
        b = self.param(f"{out}.bias", (c_out,), c_in * k * k)
        return self.node(out, OpKind.Conv2d, [x, w, b], stride=1, padding=pad)

    def linear(self, out: str, x: str, f_in: int, f_out: int) -> str:
        w = self.param(f"{out}.weight", (f_out, f_in), f_in)
        b = self.param(f"{out}.bias", (f_out,), f_in)
        return self.node(out, OpKind.Linear, [x, w, b])

    def affine(self, out: str, x: str, size: int, scale: float, shift: float) -> str:
        s = self.const(f"{out}.scale", np.full(size, scale))
        t = self.const(f"{out}.shift", np.full(size, shift))
        return self.node(out, OpKind.BatchNormAffine, [x, s, t])


def _check_input_shape(shape: Sequence[int], min_hw: int) -> Tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or shape[1] != 3 or shape[2] < min_hw or shape[3] < min_hw:
        raise InvalidConfigError("inputs", f"builtin models expect (N,3,H,W) with H,W >= {min_hw}, got {list(shape)}")
    return shape  # type: ignore[return-value]


def build_synthetic_classifier(seed: int, input_shape: Sequence[int] = DEFAULT_INPUT_SHAPE) -> GraphModel:
    """
    Conv(3→8) → Relu → MaxPool(2) → Conv(8→16) → Relu → GAP → Flatten → Linear(16→10) → Softmax。

    输出依次为 probs 与 fc（logits）；Tier-3 用首个输出。
    """
    shape = _check_input_shape(input_shape, 2)
    g = _Graph(seed)
    x = g.conv("conv1", "input", 3, 8)
    x = g.node("relu1", OpKind.Relu, [x])
    x = g.node("pool1", OpKind.MaxPool2d, [x], kernel=2, stride=2)
    x = g.conv("conv2", x, 8, 16)
    x = g.node("relu2", OpKind.Relu, [x])
    x = g.node("gap", OpKind.GlobalAvgPool, [x])
    x = g.node("flatten", OpKind.Flatten, [x])
    logits = g.linear("fc", x, 16, NUM_CLASSES_CLASSIFICATION)
    probs = g.node("probs", OpKind.Softmax, [logits], axis=1)
    return finalize_model(
        "classifier", "classification", [("input", shape)], [probs, logits], g.nodes, g.initializers
    )


def build_synthetic_segmenter(seed: int, input_shape: Sequence[int] = DEFAULT_INPUT_SHAPE) -> GraphModel:
    """保持空间尺寸的卷积栈，末层输出 4 类 logits，ArgmaxChannel 得到标签掩码。"""
    shape = _check_input_shape(input_shape, 1)
    g = _Graph(seed)
    x = g.conv("conv1", "input", 3, 8)
    x = g.node("relu1", OpKind.Relu, [x])
    x = g.conv("conv2", x, 8, 8)
    x = g.node("relu2", OpKind.Relu, [x])
    logits = g.conv("logits", x, 8, NUM_CLASSES_SEGMENTATION)
    mask = g.node("mask", OpKind.ArgmaxChannel, [logits])
    return finalize_model("segmenter", "segmentation", [("input", shape)], [mask, logits], g.nodes, g.initializers)


def _grid_box(slot: int) -> Tuple[float, float, float, float]:
    # 4×4 小框，16 列 × 4 行铺在 y >= 60 的区域，互不重叠，也不碰 A/B/C
    x1 = 1.0 + 6.0 * (slot % 16)
    y1 = 60.0 + 10.0 * (slot // 16)
    return (x1, y1, x1 + 4.0, y1 + 4.0)


def _apply_tie_fixture(g: _Graph, num_candidates: int) -> None:
    if not max(TIE_FIXTURE_BOXES) < num_candidates <= TIE_FIXTURE_MAX_CANDIDATES:
        raise InvalidConfigError(
            "params.num_candidates",
            f"tie fixture needs {max(TIE_FIXTURE_BOXES) + 1}..{TIE_FIXTURE_MAX_CANDIDATES} candidates, got {num_candidates}",
        )
    # 所有框行权重置零：框坐标只取决于 bias，两个后端得到同一组候选框
    box_w = np.zeros_like(g.initializers["box_raw.weight"].array)
    box_b = np.empty(4 * num_candidates, dtype=np.float32)
    slot = 0
    for idx in range(num_candidates):
        if idx in TIE_FIXTURE_BOXES:
            coords = TIE_FIXTURE_BOXES[idx]
        else:
            coords = _grid_box(slot)
            slot += 1
        box_b[4 * idx : 4 * idx + 4] = [(c - BOX_SHIFT) / BOX_SCALE for c in coords]
    score_w = g.initializers["candidate_scores.weight"].array.copy()
    score_b = g.initializers["candidate_scores.bias"].array.copy()
    for idx, score in TIE_FIXTURE_SCORES.items():
        score_w[idx] = 0.0
        score_b[idx] = score
    # 零权重的行在任何归约顺序下都精确得到 bias
    g.initializers["box_raw.weight"] = Tensor(box_w)
    g.initializers["box_raw.bias"] = Tensor(box_b)
    g.initializers["candidate_scores.weight"] = Tensor(score_w)
    g.initializers["candidate_scores.bias"] = Tensor(score_b)


def build_synthetic_detector(
    seed: int,
    input_shape: Sequence[int] = DEFAULT_INPUT_SHAPE,
    num_candidates: int = NUM_DETECTION_CANDIDATES,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    tie_fixture: bool = False,
) -> GraphModel:
    """
    backbone 卷积栈 → 框头 / 分数头（Linear）→ Nms。

    框坐标经仿射 + 夹取映射到 [0, 100]：min(relu(50·raw + 50), 100)，
    其中 min(v, 100) = v − relu(v − 100)，全部由闭合算子集合表达。
    """
    shape = _check_input_shape(input_shape, 2)
    n = int(num_candidates)
    if n < 1:
        raise InvalidConfigError("params.num_candidates", "must be >= 1")
    g = _Graph(seed)
    x = g.conv("conv1", "input", 3, 8)
    x = g.node("relu1", OpKind.Relu, [x])
    x = g.node("pool1", OpKind.MaxPool2d, [x], kernel=2, stride=2)
    x = g.conv("conv2", x, 8, 8)
    x = g.node("relu2", OpKind.Relu, [x])
    x = g.node("gap", OpKind.GlobalAvgPool, [x])
    feat = g.node("flatten", OpKind.Flatten, [x])

    raw = g.linear("box_raw", feat, 8, 4 * n)
    scaled = g.affine("box_affine", raw, 4 * n, BOX_SCALE, BOX_SHIFT)
    low = g.node("box_low", OpKind.Relu, [scaled])
    over = g.affine("box_over", low, 4 * n, 1.0, -BOX_MAX)
    excess = g.node("box_excess", OpKind.Relu, [over])
    neg = g.affine("box_neg", excess, 4 * n, -1.0, 0.0)
    boxes = g.node("candidate_boxes", OpKind.Add, [low, neg])
    scores = g.linear("candidate_scores", feat, 8, n)
    detections = g.node("detections", OpKind.Nms, [boxes, scores], iou_threshold=float(iou_threshold))

    if tie_fixture:
        _apply_tie_fixture(g, n)
    return finalize_model(
        "detector",
        "detection",
        [("input", shape)],
        [detections, boxes, scores],
        g.nodes,
        g.initializers,
    )


_BUILDER_PARAMS = {
    "classifier": (),
    "segmenter": (),
    "detector": ("num_candidates", "iou_threshold", "tie_fixture"),
}


def build_builtin(
    name: str,
    seed: int,
    input_shape: Sequence[int] = DEFAULT_INPUT_SHAPE,
    params: Optional[Mapping[str, Any]] = None,
) -> GraphModel:
    """按名字构建内置模型；params 只接受该构建器声明过的键。"""
    if name not in BUILTIN_MODELS:
        raise InvalidConfigError("model", f"builtin model must be one of {sorted(BUILTIN_MODELS)}, got {name!r}")
    params = dict(params or {})
    unknown = sorted(set(params) - set(_BUILDER_PARAMS[name]))
    if unknown:
        raise InvalidConfigError(f"params.{unknown[0]}", f"not accepted by builtin {name!r}")
    if name == "classifier":
        return build_synthetic_classifier(seed, input_shape)
    if name == "segmenter":
        return build_synthetic_segmenter(seed, input_shape)
    return build_synthetic_detector(seed, input_shape, **params)


__all__ = [
    "BUILDER_VERSION",
    "DEFAULT_INPUT_SHAPE",
    "TIE_FIXTURE_BOXES",
    "TIE_FIXTURE_SCORES",
    "TIE_FIXTURE_MAX_CANDIDATES",
    "build_synthetic_classifier",
    "build_synthetic_segmenter",
    "build_synthetic_detector",
    "build_builtin",
]
