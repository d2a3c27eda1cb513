"""
最小算子图表示。

负责：
- GraphModel / Node / OpKind；
- 从 JSON 文档加载并校验（拓扑顺序、属性集合、悬空引用）；
- 形状推导；
- 导出为规范 JSON 形式（initializer 全部内联）。
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from driftcheck.constants import OP_ARITY, OP_ATTRS, OP_KINDS, TASKS
from driftcheck.errors import GraphError, ShapeError, UnsupportedOpError
from driftcheck.tensor import DType, Tensor, product
from driftcheck.tensorfile import read_tensor_file

logger = logging.getLogger(__name__)


class OpKind(str, Enum):
    """闭合的算子枚举，成员值即算子名（与 constants.OP_KINDS 一致）。"""

    Conv2d = "Conv2d"
    Linear = "Linear"
    Relu = "Relu"
    Add = "Add"
    Concat = "Concat"
    MaxPool2d = "MaxPool2d"
    GlobalAvgPool = "GlobalAvgPool"
    BatchNormAffine = "BatchNormAffine"
    Softmax = "Softmax"
    Flatten = "Flatten"
    BilinearResize = "BilinearResize"
    ArgmaxChannel = "ArgmaxChannel"
    Nms = "Nms"


Shape = Tuple[int, ...]

_INT_ATTRS = ("stride", "padding", "kernel", "axis", "out_h", "out_w")


@dataclass(frozen=True)
class Node:
    id: str
    op: OpKind
    inputs: Tuple[str, ...]
    output: str
    attrs: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "attrs", MappingProxyType(dict(self.attrs)))


@dataclass(frozen=True, eq=False)
class GraphModel:
    name: str
    task: str
    inputs: Tuple[Tuple[str, Shape], ...]
    outputs: Tuple[str, ...]
    nodes: Tuple[Node, ...]
    initializers: Mapping[str, Tensor]
    # load 时推导出的全部张量形状
    shapes: Mapping[str, Shape] = field(default_factory=dict)

    @property
    def input_names(self) -> List[str]:
        return [name for name, _ in self.inputs]

    def node_index(self, node_id: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.id == node_id:
                return i
        raise GraphError(f"unknown node id {node_id!r}")

    def producer(self, tensor_name: str) -> Optional[Node]:
        for node in self.nodes:
            if node.output == tensor_name:
                return node
        return None


def parse_op(name: Any) -> OpKind:
    if not isinstance(name, str) or name not in OP_KINDS:
        raise UnsupportedOpError(str(name), f"unsupported op kind: {name!r}")
    return OpKind(name)


# ---------------------------------------------------------------------------
# 校验
# ---------------------------------------------------------------------------


def _check_attrs(node: Node) -> None:
    expected = set(OP_ATTRS[node.op.value])
    got = set(node.attrs)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise GraphError(
            f"node {node.id!r} ({node.op.value}): attrs must be exactly {sorted(expected)}; "
            f"missing={missing} extra={extra}"
        )
    for key in _INT_ATTRS:
        if key in node.attrs:
            val = node.attrs[key]
            if isinstance(val, bool) or not isinstance(val, int):
                raise GraphError(f"node {node.id!r}: attr {key!r} must be an integer, got {val!r}")
    for key in ("stride", "kernel", "out_h", "out_w"):
        if key in node.attrs and node.attrs[key] < 1:
            raise GraphError(f"node {node.id!r}: attr {key!r} must be >= 1")
    if "padding" in node.attrs and node.attrs["padding"] < 0:
        raise GraphError(f"node {node.id!r}: attr 'padding' must be >= 0")
    if "iou_threshold" in node.attrs:
        thr = node.attrs["iou_threshold"]
        if isinstance(thr, bool) or not isinstance(thr, (int, float)) or not 0.0 <= float(thr) <= 1.0:
            raise GraphError(f"node {node.id!r}: iou_threshold must be a number in [0, 1], got {thr!r}")

    lo, hi = OP_ARITY[node.op.value]
    n = len(node.inputs)
    if n < lo or (hi is not None and n > hi):
        raise GraphError(f"node {node.id!r} ({node.op.value}): wrong number of inputs ({n})")


def validate_model(model: GraphModel) -> None:
    """校验拓扑顺序、节点 id 唯一、属性集合与输出存在性。"""
    if model.task not in TASKS:
        raise GraphError(f"task must be one of {TASKS}, got {model.task!r}")
    if not model.inputs:
        raise GraphError("model declares no inputs")

    defined = set(model.input_names) | set(model.initializers)
    later = {node.output: i for i, node in enumerate(model.nodes)}
    seen_ids: set[str] = set()
    for i, node in enumerate(model.nodes):
        if node.id in seen_ids:
            raise GraphError(f"duplicate node id {node.id!r}")
        seen_ids.add(node.id)
        _check_attrs(node)
        for name in node.inputs:
            if name in defined:
                continue
            if name in later and later[name] >= i:
                raise GraphError(
                    f"node {node.id!r} consumes {name!r} before it is produced (topological order violated)"
                )
            raise GraphError(f"node {node.id!r} references undefined tensor {name!r}")
        if node.output in defined:
            raise GraphError(f"tensor {node.output!r} is defined more than once")
        defined.add(node.output)

    for name in model.outputs:
        if name not in defined:
            raise GraphError(f"graph output {name!r} is never produced")
    if not model.outputs:
        raise GraphError("model declares no outputs")


# ---------------------------------------------------------------------------
# 形状推导
# ---------------------------------------------------------------------------


def _expect_rank(shape: Shape, rank: int, node: Node, what: str = "input") -> None:
    if len(shape) != rank:
        raise ShapeError(f"{what} must be rank {rank}, got shape {list(shape)}", node.id)


def _axis(axis: int, rank: int, node: Node) -> int:
    if not -rank <= axis < rank:
        raise ShapeError(f"axis {axis} out of range for rank {rank}", node.id)
    return axis % rank


def box_count(boxes: Shape, node: Node) -> int:
    """Nms 的 boxes 接受 (N,4) 或 (1,4N)。"""
    if len(boxes) == 2 and boxes[1] == 4:
        return boxes[0]
    if len(boxes) == 2 and boxes[0] == 1 and boxes[1] % 4 == 0:
        return boxes[1] // 4
    raise ShapeError(f"boxes must be (N,4) or (1,4N), got {list(boxes)}", node.id)


def _infer_node(node: Node, ins: List[Shape]) -> Shape:
    op = node.op.value
    a = node.attrs
    if op == "Conv2d":
        x, w, b = ins
        _expect_rank(x, 4, node)
        _expect_rank(w, 4, node, "weight")
        if w[1] != x[1]:
            raise ShapeError(f"weight expects {w[1]} input channels, input has {x[1]}", node.id)
        if b != (w[0],):
            raise ShapeError(f"bias must be ({w[0]},), got {list(b)}", node.id)
        s, p = a["stride"], a["padding"]
        oh = (x[2] + 2 * p - w[2]) // s + 1
        ow = (x[3] + 2 * p - w[3]) // s + 1
        if oh < 1 or ow < 1:
            raise ShapeError("kernel larger than padded input", node.id)
        return (x[0], w[0], oh, ow)
    if op == "Linear":
        x, w, b = ins
        _expect_rank(x, 2, node)
        _expect_rank(w, 2, node, "weight")
        if w[1] != x[1]:
            raise ShapeError(f"weight expects {w[1]} features, input has {x[1]}", node.id)
        if b != (w[0],):
            raise ShapeError(f"bias must be ({w[0]},), got {list(b)}", node.id)
        return (x[0], w[0])
    if op in ("Relu", "Softmax"):
        if op == "Softmax":
            _axis(a["axis"], len(ins[0]), node)
        return ins[0]
    if op == "Add":
        if ins[0] != ins[1]:
            raise ShapeError(f"Add operands differ: {list(ins[0])} vs {list(ins[1])}", node.id)
        return ins[0]
    if op == "Concat":
        rank = len(ins[0])
        axis = _axis(a["axis"], rank, node)
        out = list(ins[0])
        for other in ins[1:]:
            if len(other) != rank or any(o != s for k, (o, s) in enumerate(zip(other, ins[0])) if k != axis):
                raise ShapeError(f"Concat operands incompatible: {list(ins[0])} vs {list(other)}", node.id)
            out[axis] += other[axis]
        return tuple(out)
    if op == "MaxPool2d":
        x = ins[0]
        _expect_rank(x, 4, node)
        k, s = a["kernel"], a["stride"]
        if x[2] < k or x[3] < k:
            raise ShapeError(f"pool kernel {k} larger than input {list(x)}", node.id)
        return (x[0], x[1], (x[2] - k) // s + 1, (x[3] - k) // s + 1)
    if op == "GlobalAvgPool":
        x = ins[0]
        _expect_rank(x, 4, node)
        return (x[0], x[1], 1, 1)
    if op == "BatchNormAffine":
        x, scale, shift = ins
        if len(x) < 2:
            raise ShapeError("BatchNormAffine needs a channel axis", node.id)
        if scale != (x[1],) or shift != (x[1],):
            raise ShapeError(f"scale/shift must be ({x[1]},)", node.id)
        return x
    if op == "Flatten":
        x = ins[0]
        if len(x) < 1:
            raise ShapeError("Flatten needs a batch axis", node.id)
        return (x[0], product(x[1:]))
    if op == "BilinearResize":
        x = ins[0]
        _expect_rank(x, 4, node)
        return (x[0], x[1], a["out_h"], a["out_w"])
    if op == "ArgmaxChannel":
        x = ins[0]
        _expect_rank(x, 4, node)
        return (x[0], 1, x[2], x[3])
    if op == "Nms":
        boxes, scores = ins
        n = box_count(boxes, node)
        if scores not in ((n,), (1, n)):
            raise ShapeError(f"scores must be ({n},) or (1,{n}), got {list(scores)}", node.id)
        # 保留数量依赖数据；这里给出上界 (N, 5)
        return (n, 5)
    raise UnsupportedOpError(op)


def infer_shapes(model: GraphModel) -> Dict[str, Shape]:
    shapes: Dict[str, Shape] = {name: tuple(shape) for name, shape in model.inputs}
    for name, tensor in model.initializers.items():
        shapes[name] = tensor.shape
    for node in model.nodes:
        shapes[node.output] = _infer_node(node, [shapes[name] for name in node.inputs])
    return shapes


def finalize_model(
    name: str,
    task: str,
    inputs: Sequence[Tuple[str, Sequence[int]]],
    outputs: Sequence[str],
    nodes: Sequence[Node],
    initializers: Mapping[str, Tensor],
) -> GraphModel:
    """构造、校验并推导形状，返回不可变的 GraphModel。"""
    model = GraphModel(
        name=name,
        task=task,
        inputs=tuple((n, tuple(int(s) for s in shape)) for n, shape in inputs),
        outputs=tuple(outputs),
        nodes=tuple(nodes),
        initializers=MappingProxyType(dict(initializers)),
    )
    validate_model(model)
    shapes = infer_shapes(model)
    object.__setattr__(model, "shapes", MappingProxyType(shapes))
    return model


# ---------------------------------------------------------------------------
# JSON 加载 / 导出
# ---------------------------------------------------------------------------


def _require(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise GraphError(f"{where}: missing key {key!r}")
    return doc[key]


def _load_initializer(name: str, spec: Any, base_dir: Path) -> Tensor:
    if not isinstance(spec, Mapping):
        raise GraphError(f"initializers.{name}: must be a mapping with 'file' or 'inline'")
    if "file" in spec:
        path = Path(str(spec["file"]))
        if not path.is_absolute():
            path = (base_dir / path).resolve()
        return read_tensor_file(path)
    if "inline" in spec:
        dtype = spec.get("dtype", "F32")
        try:
            return Tensor.of(spec["inline"], DType(dtype))
        except ValueError as e:
            raise GraphError(f"initializers.{name}: {e}") from e
    raise GraphError(f"initializers.{name}: must contain 'file' or 'inline'")


def load_model(document: Union[str, Mapping[str, Any]], base_dir: Union[str, Path] = ".") -> GraphModel:
    """
    从模型 JSON 文档加载 GraphModel。

    :param document: JSON 字符串或已解析的 mapping
    :param base_dir: initializer 相对路径的解析基准（通常为模型文件所在目录）
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise GraphError(f"model document is not valid JSON: {e}") from e
    if not isinstance(document, Mapping):
        raise GraphError("model document must be a JSON object")
    base = Path(base_dir)

    nodes: List[Node] = []
    for i, raw in enumerate(_require(document, "nodes", "model")):
        where = f"nodes[{i}]"
        op = parse_op(_require(raw, "op", where))
        nodes.append(
            Node(
                id=str(_require(raw, "id", where)),
                op=op,
                inputs=tuple(str(n) for n in _require(raw, "inputs", where)),
                output=str(_require(raw, "output", where)),
                attrs=dict(raw.get("attrs") or {}),
            )
        )

    inputs = []
    for i, raw in enumerate(_require(document, "inputs", "model")):
        inputs.append((str(_require(raw, "name", f"inputs[{i}]")), [int(s) for s in _require(raw, "shape", f"inputs[{i}]")]))

    initializers = {
        str(name): _load_initializer(str(name), spec, base)
        for name, spec in (document.get("initializers") or {}).items()
    }
    model = finalize_model(
        name=str(_require(document, "name", "model")),
        task=str(_require(document, "task", "model")),
        inputs=inputs,
        outputs=[str(n) for n in _require(document, "outputs", "model")],
        nodes=nodes,
        initializers=initializers,
    )
    logger.debug("loaded model %s: %d nodes, %d initializers", model.name, len(model.nodes), len(initializers))
    return model


def load_model_file(path: Union[str, Path]) -> GraphModel:
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        text = f.read()
    return load_model(text, base_dir=path.resolve().parent)


def dump_model(model: GraphModel) -> Dict[str, Any]:
    """导出规范形式：键顺序固定，initializer 按名字排序并内联。"""
    return {
        "name": model.name,
        "task": model.task,
        "inputs": [{"name": n, "shape": list(shape)} for n, shape in model.inputs],
        "outputs": list(model.outputs),
        "nodes": [
            {
                "id": node.id,
                "op": node.op.value,
                "inputs": list(node.inputs),
                "output": node.output,
                "attrs": {k: node.attrs[k] for k in sorted(node.attrs)},
            }
            for node in model.nodes
        ],
        "initializers": {
            name: {"inline": model.initializers[name].array.tolist(), "dtype": model.initializers[name].dtype.value}
            for name in sorted(model.initializers)
        },
    }


def zero_initializers(model: GraphModel) -> GraphModel:
    """把全部权重置零（测试夹具用：验证 argmax 平局规则等）。"""
    zeros = {name: Tensor(np.zeros_like(t.array)) for name, t in model.initializers.items()}
    return replace_initializers(model, zeros)


def replace_initializers(model: GraphModel, updates: Mapping[str, Tensor]) -> GraphModel:
    """替换同名 initializer 并重新校验形状；不允许引入新名字。"""
    unknown = sorted(set(updates) - set(model.initializers))
    if unknown:
        raise GraphError(f"unknown initializer {unknown[0]!r}")
    merged = dict(model.initializers)
    merged.update(updates)
    return finalize_model(model.name, model.task, model.inputs, model.outputs, model.nodes, merged)


__all__ = [
    "OpKind",
    "Node",
    "GraphModel",
    "Shape",
    "parse_op",
    "validate_model",
    "infer_shapes",
    "finalize_model",
    "box_count",
    "load_model",
    "load_model_file",
    "dump_model",
    "zero_initializers",
    "replace_initializers",
]
