"""
每种 OpKind 一个求值函数，全部在 float32 上计算。

带归约的算子（Conv2d / Linear / GlobalAvgPool / Softmax 分母）先逐项相乘，
再交给调用方给定的 reducer 沿归约轴累加。
"""

from __future__ import annotations

from typing import Any, Callable, List, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from driftcheck.errors import UnsupportedOpError
from driftcheck.graph import Node, OpKind
from driftcheck.nms import nms
from driftcheck.tensor import bilinear_resize_array

Reducer = Callable[..., np.ndarray]

F32 = np.float32


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int, reduce: Reducer) -> np.ndarray:
    n, c, _, _ = x.shape
    oc, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # patch 元素顺序 (c, kh, kw) 与 w.reshape(oc, -1) 一致
    patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c * kh * kw)
    products = patches[:, :, :, None, :] * w.reshape(oc, -1)[None, None, None, :, :]
    acc = reduce(products, axis=-1) + b
    return np.ascontiguousarray(acc.transpose(0, 3, 1, 2), dtype=F32)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray, reduce: Reducer) -> np.ndarray:
    products = x[:, None, :] * w[None, :, :]
    return (reduce(products, axis=-1) + b).astype(F32, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, F32(0.0))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a + b


def concat(inputs: Sequence[np.ndarray], axis: int) -> np.ndarray:
    return np.concatenate(list(inputs), axis=axis)


def max_pool2d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    oh = (x.shape[2] - kernel) // stride + 1
    ow = (x.shape[3] - kernel) // stride + 1
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return np.ascontiguousarray(windows.max(axis=(-2, -1)))


def global_avg_pool(x: np.ndarray, reduce: Reducer) -> np.ndarray:
    n, c, h, w = x.shape
    total = reduce(x.reshape(n, c, h * w), axis=-1)
    return (total / F32(h * w)).astype(F32, copy=False).reshape(n, c, 1, 1)


def batch_norm_affine(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    return x * scale.reshape(bshape) + shift.reshape(bshape)


def softmax(x: np.ndarray, axis: int, reduce: Reducer) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.expand_dims(reduce(e, axis=axis), axis)
    return (e / denom).astype(F32, copy=False)


def flatten(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def argmax_channel(x: np.ndarray) -> np.ndarray:
    # np.argmax 平局取第一个，即通道下标最小者
    return np.argmax(x, axis=1)[:, None, :, :].astype(F32)


def nms_detections(
    boxes: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float,
    order_policy: str,
    pre_sorted: bool,
) -> np.ndarray:
    """候选框逐轴取 min/max 规范化后做 NMS，输出 (K,5) 行 [x1,y1,x2,y2,score]。"""
    raw = boxes.reshape(-1, 4)
    canon = np.stack(
        [
            np.minimum(raw[:, 0], raw[:, 2]),
            np.minimum(raw[:, 1], raw[:, 3]),
            np.maximum(raw[:, 0], raw[:, 2]),
            np.maximum(raw[:, 1], raw[:, 3]),
        ],
        axis=1,
    )
    flat_scores = scores.reshape(-1)
    kept = nms(canon, flat_scores, iou_threshold, order_policy=order_policy, pre_sorted=pre_sorted)
    rows = np.empty((len(kept), 5), dtype=F32)
    if kept:
        rows[:, :4] = canon[kept]
        rows[:, 4] = flat_scores[kept]
    return rows


def evaluate_node(
    node: Node,
    inputs: List[np.ndarray],
    reduce: Reducer,
    nms_order: str = "stable",
    pre_nms_sort: bool = False,
) -> np.ndarray:
    """按 node.op 分派到对应求值函数。"""
    a: Mapping[str, Any] = node.attrs
    op = node.op
    if op is OpKind.Conv2d:
        return conv2d(*inputs, stride=a["stride"], padding=a["padding"], reduce=reduce)
    if op is OpKind.Linear:
        return linear(*inputs, reduce=reduce)
    if op is OpKind.Relu:
        return relu(inputs[0])
    if op is OpKind.Add:
        return add(*inputs)
    if op is OpKind.Concat:
        return concat(inputs, a["axis"])
    if op is OpKind.MaxPool2d:
        return max_pool2d(inputs[0], a["kernel"], a["stride"])
    if op is OpKind.GlobalAvgPool:
        return global_avg_pool(inputs[0], reduce)
    if op is OpKind.BatchNormAffine:
        return batch_norm_affine(*inputs)
    if op is OpKind.Softmax:
        return softmax(inputs[0], a["axis"], reduce)
    if op is OpKind.Flatten:
        return flatten(inputs[0])
    if op is OpKind.BilinearResize:
        return bilinear_resize_array(inputs[0], a["out_h"], a["out_w"])
    if op is OpKind.ArgmaxChannel:
        return argmax_channel(inputs[0])
    if op is OpKind.Nms:
        return nms_detections(inputs[0], inputs[1], float(a["iou_threshold"]), nms_order, pre_nms_sort)
    raise UnsupportedOpError(op.value)


__all__ = ["Reducer", "evaluate_node", "conv2d", "linear", "softmax", "nms_detections"]
