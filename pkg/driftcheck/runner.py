"""
实验编排：config × 后端对 × atol 网格。

负责：
- 加载 / 构建模型与输入（预处理：加 batch 轴、normalize、adjust_to_multiple）；
- 每个 (config, 后端对) 单元只执行一次两侧后端，再在各 atol 上复用结果做验证；
- 单元内任何异常都转成 ERROR 记录，不影响后续单元；
- 单元可并发执行，记录按计划顺序（config, 后端对, atol 升序）写出。
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from driftcheck.backends import BackendSpec, ExecutionTrace, execute, measure_latency
from driftcheck.builders import build_builtin
from driftcheck.constants import CONFIG_DEFAULTS
from driftcheck.errors import InvalidConfigError
from driftcheck.graph import GraphModel, load_model_file
from driftcheck.reportlog import RunRecord, append_record, env_fingerprint
from driftcheck.runcfg import RunConfig, SyntheticInput, load_config
from driftcheck.seeding import set_deterministic
from driftcheck.tensor import Tensor, ToleranceSpec, adjust_to_multiple, normalize
from driftcheck.tensorfile import read_tensor_file
from driftcheck.verify import (
    Divergence,
    TaskMetrics,
    TaskThresholds,
    Tier1Result,
    build_report,
    fixed_shape_outputs,
    tier1_compare,
    tier2_localize,
    tier3_task,
)

logger = logging.getLogger(__name__)

BACKEND_NAMES = ("reference", "optimized")


@dataclass(frozen=True)
class SweepPlan:
    """
    一次 `driftcheck run` 的执行计划。

    atol_grid / rtol / seed 为 None 时使用各 config 自己的值。
    target 为 None 时由 config 的 options.optimized 决定目标后端。
    """

    config_paths: Tuple[Path, ...] = ()
    target: Optional[str] = None
    all_pairs: bool = False
    atol_grid: Optional[Tuple[float, ...]] = None
    rtol: Optional[float] = None
    seed: Optional[int] = None
    out_path: Optional[Path] = None
    jobs: int = 1
    pattern: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "config_paths", tuple(Path(p) for p in self.config_paths))
        if self.target is not None and self.target not in BACKEND_NAMES:
            raise InvalidConfigError("--target", f"must be one of {list(BACKEND_NAMES)}, got {self.target!r}")
        if self.atol_grid is not None:
            grid = tuple(float(a) for a in self.atol_grid)
            if not grid:
                raise InvalidConfigError("--sweep-atol", "must list at least one atol")
            if any(a < 0 for a in grid):
                raise InvalidConfigError("--sweep-atol", "atol values must be >= 0")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise InvalidConfigError("--sweep-atol", f"must be strictly increasing, got {list(grid)}")
            object.__setattr__(self, "atol_grid", grid)
        if self.rtol is not None and self.rtol < 0:
            raise InvalidConfigError("--rtol", f"must be >= 0, got {self.rtol}")
        if self.seed is not None and self.seed < 0:
            raise InvalidConfigError("--seed", f"must be >= 0, got {self.seed}")
        if self.jobs < 1:
            raise InvalidConfigError("--jobs", f"must be >= 1, got {self.jobs}")

    def pairs(self, default_target: str) -> List[Tuple[str, str]]:
        """默认只有 reference→target；all_pairs 时为 B×B 全网格（含自身对）。"""
        target = self.target or default_target
        if not self.all_pairs:
            return [("reference", target)]
        names = ["reference"] if target == "reference" else list(BACKEND_NAMES)
        return [(r, t) for r in names for t in names]


@dataclass(frozen=True)
class SuiteSummary:
    total: int = 0
    passed: int = 0
    failed: int = 0
    errored: int = 0

    @property
    def ok(self) -> bool:
        return self.failed == 0 and self.errored == 0

    @classmethod
    def of(cls, records: Sequence[RunRecord]) -> "SuiteSummary":
        statuses = [r.status for r in records]
        return cls(
            total=len(statuses),
            passed=statuses.count("PASS"),
            failed=statuses.count("FAIL"),
            errored=statuses.count("ERROR"),
        )


def pair_name(ref: str, tgt: str) -> str:
    return f"{ref}->{tgt}"


def backend_for(config: RunConfig, name: str, role: str) -> BackendSpec:
    """ref 侧的 reference 只带 pre_nms_sort；target 侧按 config 带上全部缓解开关。"""
    if name == "reference" and role == "ref":
        return config.reference_spec()
    return config.target_spec(name)


def error_message(e: BaseException) -> str:
    return f"{type(e).__name__}: {e}"


# ---------------------------------------------------------------------------
# 输入与模型
# ---------------------------------------------------------------------------


def _raw_input(spec: Union[Path, SyntheticInput]) -> Tensor:
    if isinstance(spec, SyntheticInput):
        n = int(np.prod(spec.shape))
        values = set_deterministic(spec.seed).fork("input").uniform(n)
        return Tensor(values.astype(np.float32).reshape(spec.shape))
    return read_tensor_file(spec)


def prepare_input(config: RunConfig, spec: Union[Path, SyntheticInput]) -> Tensor:
    x = _raw_input(spec)
    if x.rank == 3:
        x = Tensor(x.array[np.newaxis])
    if config.options.normalize:
        x = normalize(x, config.means, config.stds)
    if config.options.resize_multiple is not None:
        x = adjust_to_multiple(x, config.options.resize_multiple)
    return Tensor(x.array.astype(np.float32))


def prepare_inputs(config: RunConfig) -> List[Tensor]:
    return [prepare_input(config, spec) for spec in config.inputs]


def model_label(config: RunConfig) -> str:
    return config.model if config.source == "builtin" else Path(config.model).stem


def load_run_model(config: RunConfig, input_shape: Sequence[int], seed: int) -> GraphModel:
    """builtin 按首个输入的形状构建（权重只取决于 seed），file 直接加载。"""
    if config.source == "builtin":
        return build_builtin(config.model, seed, tuple(input_shape), config.params)
    return load_model_file(config.model)


# ---------------------------------------------------------------------------
# 单个 (config, 后端对) 单元
# ---------------------------------------------------------------------------


@dataclass
class PairExecution:
    """两侧后端在全部输入样本上的执行结果；各 atol 共享。"""

    model: GraphModel
    inputs: List[Tensor]
    ref: BackendSpec
    tgt: BackendSpec
    ref_traces: List[ExecutionTrace]
    tgt_traces: List[ExecutionTrace]
    tier3: TaskMetrics
    thresholds: TaskThresholds
    latency_ms_ref: float
    latency_ms_tgt: float
    _sort_retry: Optional[bool] = field(default=None, repr=False)
    _captured: Optional[List[Tuple[ExecutionTrace, ExecutionTrace]]] = field(default=None, repr=False)

    @property
    def fallback_nodes(self) -> List[str]:
        seen: Dict[str, None] = {}
        for trace in self.tgt_traces:
            for node_id, _ in trace.fallback_events:
                seen.setdefault(node_id, None)
        return list(seen)

    def sort_retry(self) -> bool:
        """两侧都开启 pre_nms_sort 重跑一次，返回 Tier-3 是否通过。结果缓存。"""
        if self._sort_retry is None:
            ref, tgt = self.ref.with_pre_nms_sort(), self.tgt.with_pre_nms_sort()
            ref_out = [execute(self.model, self._feed(x), ref).outputs for x in self.inputs]
            tgt_out = [execute(self.model, self._feed(x), tgt).outputs for x in self.inputs]
            self._sort_retry = tier3_task(self.model, ref_out, tgt_out, self.thresholds).passed
            logger.debug("pre_nms_sort retry on %s: %s", self.model.name, self._sort_retry)
        return self._sort_retry

    def captured_traces(self) -> List[Tuple[ExecutionTrace, ExecutionTrace]]:
        """带中间激活的 (ref, tgt) 轨迹；执行时未采集则补跑一次并缓存。"""
        if self._captured is None:
            pairs = list(zip(self.ref_traces, self.tgt_traces))
            if any(r.activations is None or t.activations is None for r, t in pairs):
                pairs = [
                    (
                        execute(self.model, self._feed(x), self.ref, capture_activations=True),
                        execute(self.model, self._feed(x), self.tgt, capture_activations=True),
                    )
                    for x in self.inputs
                ]
                logger.debug("re-ran %s with activation capture for failure classification", self.model.name)
            self._captured = pairs
        return self._captured

    def _feed(self, x: Tensor) -> Dict[str, Tensor]:
        return {self.model.input_names[0]: x}


def execute_pair(config: RunConfig, ref: BackendSpec, tgt: BackendSpec, seed: int) -> PairExecution:
    """构建模型与输入，两侧各执行 options.repeats 次，并算出与容差无关的 Tier-3 结果。"""
    inputs = prepare_inputs(config)
    model = load_run_model(config, inputs[0].shape, seed)
    if len(model.inputs) != 1:
        raise InvalidConfigError("model", f"models must take exactly one input, {model.name!r} takes {len(model.inputs)}")
    name = model.input_names[0]
    capture = config.verification.capture_activations
    repeats = config.options.repeats

    ref_traces = [execute(model, {name: x}, ref, capture_activations=capture, repeats=repeats) for x in inputs]
    tgt_traces = [execute(model, {name: x}, tgt, capture_activations=capture, repeats=repeats) for x in inputs]
    thresholds = config.verification.task_thresholds
    tier3 = tier3_task(model, [t.outputs for t in ref_traces], [t.outputs for t in tgt_traces], thresholds)
    warmup = config.options.warmup
    return PairExecution(
        model=model,
        inputs=inputs,
        ref=ref,
        tgt=tgt,
        ref_traces=ref_traces,
        tgt_traces=tgt_traces,
        tier3=tier3,
        thresholds=thresholds,
        latency_ms_ref=measure_latency(ref_traces, warmup=warmup),
        latency_ms_tgt=measure_latency(tgt_traces, warmup=warmup),
    )


def _tier2(
    traces: Sequence[Tuple[ExecutionTrace, ExecutionTrace]], tol: ToleranceSpec, mode: str
) -> Optional[Divergence]:
    """各样本分别定位，取拓扑位置最早的发散节点。"""
    found: List[Divergence] = []
    for ref, tgt in traces:
        if ref.activations is None or tgt.activations is None:
            return None
        d = tier2_localize(ref.activations, tgt.activations, tol, mode)
        if d is not None:
            found.append(d)
    return min(found, key=lambda d: d.node_index) if found else None


def verify_at(
    config: RunConfig,
    execution: PairExecution,
    tol: ToleranceSpec,
    base: Dict[str, object],
) -> RunRecord:
    mode = config.verification.mode
    names = fixed_shape_outputs(execution.model)
    ref_out = [t.outputs[n] for t in execution.ref_traces for n in names]
    tgt_out = [t.outputs[n] for t in execution.tgt_traces for n in names]
    stats, passed = tier1_compare(ref_out, tgt_out, tol, mode)
    tier1 = Tier1Result(stats=stats, passed=passed, mode=mode)
    tier2 = _tier2(list(zip(execution.ref_traces, execution.tgt_traces)), tol, mode)
    report = build_report(
        tier1=tier1,
        tier2=tier2,
        tier3=execution.tier3,
        fallback_nodes=execution.fallback_nodes,
        sort_retry=execution.sort_retry,
        localize=lambda: _tier2(execution.captured_traces(), tol, mode),
    )
    t3 = execution.tier3
    return RunRecord(
        **base,
        status=report.status,
        max_abs_diff=stats.max_abs_diff,
        mae=stats.mae,
        p95_abs_diff=stats.p95_abs_diff,
        tier2_first_divergence=tier2.node_id if tier2 is not None else None,
        task=t3.task,
        top1_match=t3.top1_match,
        topk_agreement=t3.topk_agreement,
        miou=t3.miou,
        detection_f1=t3.detection_f1,
        task_pass=t3.passed,
        taxonomy=report.taxonomy.value,
        latency_ms_ref=execution.latency_ms_ref,
        latency_ms_tgt=execution.latency_ms_tgt,
    )


def error_record(base: Dict[str, object], e: BaseException) -> RunRecord:
    report = build_report(error=e)
    return RunRecord(**base, status="ERROR", taxonomy=report.taxonomy.value, error_message=error_message(e))


def _base_fields(config_label: str, model: str, pair: str, tol: ToleranceSpec, seed: int) -> Dict[str, object]:
    return {
        "config": config_label,
        "model": model,
        "backend_pair": pair,
        "atol": tol.atol,
        "rtol": tol.rtol,
        "seed": seed,
        "env": env_fingerprint(seed),
    }


def run_cell(
    config: RunConfig,
    ref: BackendSpec,
    tgt: BackendSpec,
    tolerances: Sequence[ToleranceSpec],
    seed: Optional[int] = None,
    pair: Optional[str] = None,
    config_label: Optional[str] = None,
) -> List[RunRecord]:
    """执行一个 (config, 后端对) 单元，按 tolerances 的顺序逐个返回记录。不抛异常。"""
    seed = config.seed if seed is None else seed
    pair = pair or pair_name(ref.name, tgt.name)
    label = config_label or str(config.path)
    model = model_label(config)
    try:
        execution: Optional[PairExecution] = execute_pair(config, ref, tgt, seed)
        failure: Optional[BaseException] = None
    except Exception as e:  # noqa: BLE001
        logger.debug("%s [%s] failed", label, pair, exc_info=True)
        execution, failure = None, e

    records: List[RunRecord] = []
    for tol in tolerances:
        base = _base_fields(label, model, pair, tol, seed)
        if execution is None:
            assert failure is not None
            records.append(error_record(base, failure))
            continue
        try:
            records.append(verify_at(config, execution, tol, base))
        except Exception as e:  # noqa: BLE001
            logger.debug("%s [%s] verification failed at atol=%s", label, pair, tol.atol, exc_info=True)
            records.append(error_record(base, e))
    return records


def run_once(config: RunConfig, ref: BackendSpec, tgt: BackendSpec, tol: ToleranceSpec) -> RunRecord:
    """单次检查：一个 config、一个后端对、一个容差。"""
    return run_cell(config, ref, tgt, [tol])[0]


# ---------------------------------------------------------------------------
# 整个计划
# ---------------------------------------------------------------------------


Unit = Callable[[], List[RunRecord]]


def _config_error_records(plan: SweepPlan, path: Path, e: BaseException) -> List[RunRecord]:
    seed = CONFIG_DEFAULTS["seed"] if plan.seed is None else plan.seed
    rtol = CONFIG_DEFAULTS["rtol"] if plan.rtol is None else plan.rtol
    grid = plan.atol_grid or (CONFIG_DEFAULTS["atol"],)
    records = []
    for ref, tgt in plan.pairs("optimized"):
        for atol in grid:
            base = _base_fields(str(path), "unknown", pair_name(ref, tgt), ToleranceSpec(atol, rtol), seed)
            records.append(error_record(base, e))
    return records


def plan_units(plan: SweepPlan) -> List[Unit]:
    """按计划顺序展开成单元；配置本身不合法时该 config 的所有格子都是 ERROR。"""
    units: List[Unit] = []
    for path in plan.config_paths:
        try:
            config = load_config(path)
        except Exception as e:  # noqa: BLE001
            logger.debug("cannot load %s", path, exc_info=True)
            units.append(lambda p=path, err=e: _config_error_records(plan, p, err))
            continue
        tol = config.verification.tol
        rtol = tol.rtol if plan.rtol is None else plan.rtol
        grid = plan.atol_grid or (tol.atol,)
        tolerances = [ToleranceSpec(atol, rtol) for atol in grid]
        default_target = "optimized" if config.options.optimized else "reference"
        for ref_name, tgt_name in plan.pairs(default_target):

            def unit(c=config, r=ref_name, t=tgt_name, p=path, tols=tolerances) -> List[RunRecord]:
                try:
                    ref, tgt = backend_for(c, r, "ref"), backend_for(c, t, "tgt")
                except Exception as e:  # noqa: BLE001
                    seed = c.seed if plan.seed is None else plan.seed
                    return [
                        error_record(_base_fields(str(p), model_label(c), pair_name(r, t), tol, seed), e)
                        for tol in tols
                    ]
                return run_cell(c, ref, tgt, tols, plan.seed, pair_name(r, t), str(p))

            units.append(unit)
    return units


def console_line(record: RunRecord, show_pair: bool = False) -> str:
    name = os.path.basename(record.config)
    if show_pair:
        name = f"{name} [{record.backend_pair}]"
    line = f"[{record.status}] {name} (atol={record.atol}, rtol={record.rtol})"
    if record.status == "ERROR":
        line += f" -> {record.error_message}"
    return line


def run_suite(plan: SweepPlan) -> Tuple[SuiteSummary, List[RunRecord]]:
    """
    执行整个计划：每行结果打印到 stdout，记录按计划顺序追加到 plan.out_path（若给出）。

    单元在 jobs 个线程里并发执行，但结果按提交顺序收集，所以输出顺序与调度无关。
    """
    if not plan.config_paths:
        print(f"No configs matched: {plan.pattern}")
        logger.warning("no configs matched %r", plan.pattern)
        return SuiteSummary(), []

    units = plan_units(plan)
    records: List[RunRecord] = []
    with ThreadPoolExecutor(max_workers=plan.jobs) as pool:
        futures = [pool.submit(unit) for unit in units]
        for future in futures:
            for record in future.result():
                if plan.out_path is not None:
                    record = append_record(record, plan.out_path)
                records.append(record)
                print(console_line(record, plan.all_pairs))

    summary = SuiteSummary.of(records)
    print("\n=== Summary ===")
    print(f"Total: {summary.total}  Passed: {summary.passed}  Failed: {summary.failed}  Errored: {summary.errored}")
    logger.info("suite finished: %s", summary)
    return summary, records


__all__ = [
    "BACKEND_NAMES",
    "SweepPlan",
    "SuiteSummary",
    "PairExecution",
    "pair_name",
    "backend_for",
    "prepare_input",
    "prepare_inputs",
    "load_run_model",
    "execute_pair",
    "run_cell",
    "run_once",
    "run_suite",
    "console_line",
]
