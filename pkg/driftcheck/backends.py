"""
执行后端：严格的 reference 解释器与刻意引入漂移的 optimized 变体。

optimized 的漂移来源（均可单独开关）：
- reduction_order=pairwise：带归约算子改用成对累加；
- precision=reduced：每个节点输出舍入到 binary16；fuse_conv_relu 时 Conv2d→Relu 之间不舍入；
- nms_order=unstable：NMS 平局逆序访问；
- unsupported_ops：这些算子直接报 UnsupportedOpError（模拟算子支持不全）。

缓解开关（MitigationSet）：pre_nms_sort、force_full_precision、eager_fallback_ops。
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from driftcheck.constants import BACKEND_KINDS, CONFIG_DEFAULTS, NMS_ORDERS, PRECISIONS, REDUCTION_ORDERS
from driftcheck.errors import GraphError, InvalidConfigError, ShapeError, UnsupportedOpError
from driftcheck.graph import GraphModel, Node, OpKind, parse_op
from driftcheck.kernels import Reducer, evaluate_node
from driftcheck.tensor import Tensor, half_round_array, reduce_pairwise, reduce_sequential

logger = logging.getLogger(__name__)


def _op_set(ops: Iterable[object], key: str) -> FrozenSet[OpKind]:
    result = set()
    for op in ops:
        try:
            result.add(op if isinstance(op, OpKind) else parse_op(op))
        except UnsupportedOpError as e:
            raise InvalidConfigError(key, f"{op!r} is not an op kind") from e
    return frozenset(result)


@dataclass(frozen=True)
class MitigationSet:
    pre_nms_sort: bool = False
    force_full_precision: bool = False
    eager_fallback_ops: FrozenSet[OpKind] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "eager_fallback_ops", _op_set(self.eager_fallback_ops, "mitigations.eager_fallback_ops")
        )


@dataclass(frozen=True)
class BackendSpec:
    name: str
    kind: str = "reference"
    precision: str = "full"
    reduction_order: str = "sequential"
    fuse_conv_relu: bool = False
    nms_order: str = "stable"
    mitigations: MitigationSet = field(default_factory=MitigationSet)
    unsupported_ops: FrozenSet[OpKind] = frozenset()

    def __post_init__(self) -> None:
        for key, value, allowed in (
            ("kind", self.kind, BACKEND_KINDS),
            ("options.precision", self.precision, PRECISIONS),
            ("options.reduction_order", self.reduction_order, REDUCTION_ORDERS),
            ("options.nms_order", self.nms_order, NMS_ORDERS),
        ):
            if value not in allowed:
                raise InvalidConfigError(key, f"must be one of {allowed}, got {value!r}")
        object.__setattr__(self, "unsupported_ops", _op_set(self.unsupported_ops, "options.unsupported_ops"))
        if self.kind == "reference" and (
            self.precision != "full"
            or self.reduction_order != "sequential"
            or self.fuse_conv_relu
            or self.nms_order != "stable"
            or self.unsupported_ops
        ):
            raise InvalidConfigError("kind", "reference backend must be full/sequential/unfused/stable")

    @classmethod
    def reference(cls, mitigations: Optional[MitigationSet] = None) -> "BackendSpec":
        return cls(name="reference", kind="reference", mitigations=mitigations or MitigationSet())

    @classmethod
    def optimized(cls, mitigations: Optional[MitigationSet] = None, **overrides: object) -> "BackendSpec":
        fields = {
            "precision": CONFIG_DEFAULTS["precision"],
            "reduction_order": CONFIG_DEFAULTS["reduction_order"],
            "fuse_conv_relu": CONFIG_DEFAULTS["fuse_conv_relu"],
            "nms_order": CONFIG_DEFAULTS["nms_order"],
        }
        fields.update(overrides)
        return cls(name="optimized", kind="optimized", mitigations=mitigations or MitigationSet(), **fields)

    @property
    def effective_precision(self) -> str:
        return "full" if self.mitigations.force_full_precision else self.precision

    def with_pre_nms_sort(self) -> "BackendSpec":
        return dataclasses.replace(
            self, mitigations=dataclasses.replace(self.mitigations, pre_nms_sort=True)
        )


REFERENCE_SEMANTICS = BackendSpec.reference()


@dataclass
class ExecutionTrace:
    outputs: Dict[str, Tensor]
    activations: Optional[Dict[str, Tensor]] = None
    latencies_ms: List[float] = field(default_factory=list)
    fallback_events: List[Tuple[str, OpKind]] = field(default_factory=list)
    # 实际执行 binary16 舍入的次数（首轮）
    half_roundings: int = 0


def _reducer(order: str) -> Reducer:
    return reduce_pairwise if order == "pairwise" else reduce_sequential


def _consumer_counts(model: GraphModel) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for node in model.nodes:
        for name in node.inputs:
            counts[name] = counts.get(name, 0) + 1
    return counts


def _fused_into_next(
    model: GraphModel, i: int, consumers: Mapping[str, int], fallback_ops: FrozenSet[OpKind] = frozenset()
) -> bool:
    # 回退的 Relu 不属于融合区域，Conv2d 自己舍入
    node = model.nodes[i]
    if node.op is not OpKind.Conv2d or i + 1 >= len(model.nodes):
        return False
    nxt = model.nodes[i + 1]
    return (
        nxt.op is OpKind.Relu
        and nxt.op not in fallback_ops
        and nxt.inputs[0] == node.output
        and consumers.get(node.output, 0) == 1
        and node.output not in model.outputs
    )


def _check_inputs(model: GraphModel, inputs: Mapping[str, Tensor]) -> None:
    for name, shape in model.inputs:
        if name not in inputs:
            raise GraphError(f"missing input {name!r}")
        if inputs[name].shape != tuple(shape):
            raise ShapeError(f"input {name!r} has shape {list(inputs[name].shape)}, model expects {list(shape)}")


class _Run:
    """一次前向：按拓扑顺序求值，记录回退事件与舍入次数。"""

    def __init__(self, model: GraphModel, spec: BackendSpec, capture: bool):
        self.model = model
        self.spec = spec
        self.capture = capture
        self.consumers = _consumer_counts(model)
        self.fallback_events: List[Tuple[str, OpKind]] = []
        self.half_roundings = 0
        self.activations: Optional[Dict[str, Tensor]] = {} if capture else None

    def _semantics(self, node: Node) -> Tuple[BackendSpec, bool]:
        spec = self.spec
        if spec.kind != "optimized":
            return spec, False
        fallback = node.op in spec.mitigations.eager_fallback_ops
        if node.op in spec.unsupported_ops and not fallback:
            raise UnsupportedOpError(
                node.op.value, f"backend {spec.name!r} does not implement {node.op.value} (node {node.id!r})"
            )
        return (REFERENCE_SEMANTICS if fallback else spec), fallback

    def _fused(self, i: int) -> bool:
        return self.spec.fuse_conv_relu and _fused_into_next(
            self.model, i, self.consumers, self.spec.mitigations.eager_fallback_ops
        )

    def __call__(self, env: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        precision = self.spec.effective_precision
        for i, node in enumerate(self.model.nodes):
            semantics, fallback = self._semantics(node)
            out = evaluate_node(
                node,
                [env[name] for name in node.inputs],
                _reducer(semantics.reduction_order),
                nms_order=semantics.nms_order,
                pre_nms_sort=self.spec.mitigations.pre_nms_sort,
            )
            if fallback:
                self.fallback_events.append((node.id, node.op))
            elif precision == "reduced" and not self._fused(i):
                out = half_round_array(out)
                self.half_roundings += 1
            env[node.output] = out
            if self.activations is not None:
                self.activations[node.id] = Tensor(out)
        return env


def execute(
    model: GraphModel,
    inputs: Mapping[str, Tensor],
    spec: BackendSpec,
    capture_activations: bool = False,
    repeats: int = 1,
) -> ExecutionTrace:
    """
    在 spec 语义下执行模型 repeats 次并逐次计时，返回首轮的输出。

    输入与 initializer 一律转为 float32 参与计算。
    """
    if repeats < 1:
        raise InvalidConfigError("options.repeats", f"must be >= 1, got {repeats}")
    _check_inputs(model, inputs)
    base_env = {name: t.array.astype(np.float32) for name, t in model.initializers.items()}
    base_env.update({name: inputs[name].array.astype(np.float32) for name in model.input_names})

    first: Optional[_Run] = None
    first_env: Dict[str, np.ndarray] = {}
    latencies: List[float] = []
    for r in range(repeats):
        run = _Run(model, spec, capture_activations and r == 0)
        start = time.perf_counter()
        env = run(dict(base_env))
        latencies.append((time.perf_counter() - start) * 1000.0)
        if first is None:
            first, first_env = run, env

    assert first is not None
    if first.fallback_events:
        logger.debug("%s: eager fallback on %s", spec.name, [node_id for node_id, _ in first.fallback_events])
    return ExecutionTrace(
        outputs={name: Tensor(first_env[name]) for name in model.outputs},
        activations=first.activations,
        latencies_ms=latencies,
        fallback_events=first.fallback_events,
        half_roundings=first.half_roundings,
    )


def measure_latency(trace: Union[ExecutionTrace, Sequence[ExecutionTrace]], warmup: bool = False) -> float:
    """
    逐次耗时的中位数（偶数个取较小的那个）。

    传入多条轨迹（多个输入样本）时合并全部耗时；warmup 时每条轨迹剔除第一次。
    """
    traces = [trace] if isinstance(trace, ExecutionTrace) else list(trace)
    values: List[float] = []
    for t in traces:
        values.extend(t.latencies_ms[1:] if warmup and len(t.latencies_ms) > 1 else t.latencies_ms)
    if not values:
        raise ValueError("no latencies recorded")
    values.sort()
    return values[(len(values) - 1) // 2]


__all__ = [
    "MitigationSet",
    "BackendSpec",
    "ExecutionTrace",
    "REFERENCE_SEMANTICS",
    "execute",
    "measure_latency",
]
