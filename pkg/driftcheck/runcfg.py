"""
运行配置：一个 YAML 对应一次实验。

负责：
- 解析并校验 YAML（未知键一律报错，错误信息带键路径）；
- 套用默认值（唯一出处为 constants.CONFIG_DEFAULTS）；
- 相对路径按配置文件所在目录解析；
- 展开配置 glob。
"""

from __future__ import annotations

import glob
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence, Tuple, Union

import yaml

from driftcheck.backends import BackendSpec, MitigationSet
from driftcheck.constants import (
    BUILTIN_MODELS,
    CONFIG_DEFAULTS,
    MODEL_SOURCES,
    OP_KINDS,
    SOURCE_ALIASES,
    VERIFICATION_MODES,
)
from driftcheck.errors import ConfigParseError, InvalidConfigError
from driftcheck.tensor import ToleranceSpec
from driftcheck.verify import TaskThresholds

TOP_LEVEL_KEYS = (
    "source",
    "from",
    "model",
    "inputs",
    "means",
    "stds",
    "options",
    "verification",
    "mitigations",
    "seed",
    "params",
)
OPTION_KEYS = (
    "optimized",
    "compile",
    "resize_multiple",
    "precision",
    "repeats",
    "warmup",
    "normalize",
    "reduction_order",
    "fuse_conv_relu",
    "nms_order",
    "unsupported_ops",
)
VERIFICATION_KEYS = ("tol", "mode", "capture_activations", "task_thresholds")
TOL_KEYS = ("atol", "rtol")
MITIGATION_KEYS = ("pre_nms_sort", "force_full_precision", "eager_fallback_ops")
SYNTHETIC_INPUT_KEYS = ("shape", "seed")


@dataclass(frozen=True)
class SyntheticInput:
    """由 SplitMix64 生成的 [0,1) 均匀输入。"""

    shape: Tuple[int, ...]
    seed: int


InputSpec = Union[Path, SyntheticInput]


@dataclass(frozen=True)
class Options:
    optimized: bool = CONFIG_DEFAULTS["optimized"]
    resize_multiple: Optional[int] = CONFIG_DEFAULTS["resize_multiple"]
    precision: str = CONFIG_DEFAULTS["precision"]
    repeats: int = CONFIG_DEFAULTS["repeats"]
    warmup: bool = CONFIG_DEFAULTS["warmup"]
    normalize: bool = CONFIG_DEFAULTS["normalize"]
    reduction_order: str = CONFIG_DEFAULTS["reduction_order"]
    fuse_conv_relu: bool = CONFIG_DEFAULTS["fuse_conv_relu"]
    nms_order: str = CONFIG_DEFAULTS["nms_order"]
    unsupported_ops: Tuple[str, ...] = ()


@dataclass(frozen=True)
class VerificationConfig:
    tol: ToleranceSpec = field(default_factory=ToleranceSpec)
    mode: str = CONFIG_DEFAULTS["mode"]
    capture_activations: bool = CONFIG_DEFAULTS["capture_activations"]
    task_thresholds: TaskThresholds = field(default_factory=TaskThresholds)


@dataclass(frozen=True)
class RunConfig:
    path: Path
    source: str
    model: str
    inputs: Tuple[InputSpec, ...]
    means: Tuple[float, ...] = CONFIG_DEFAULTS["means"]
    stds: Tuple[float, ...] = CONFIG_DEFAULTS["stds"]
    options: Options = field(default_factory=Options)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    mitigations: MitigationSet = field(default_factory=MitigationSet)
    seed: int = CONFIG_DEFAULTS["seed"]
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.path.name

    def reference_spec(self) -> BackendSpec:
        """reference 侧只继承 pre_nms_sort（后处理适配器两侧一致）。"""
        return BackendSpec.reference(MitigationSet(pre_nms_sort=self.mitigations.pre_nms_sort))

    def optimized_spec(self) -> BackendSpec:
        o = self.options
        return BackendSpec(
            name="optimized",
            kind="optimized",
            precision=o.precision,
            reduction_order=o.reduction_order,
            fuse_conv_relu=o.fuse_conv_relu,
            nms_order=o.nms_order,
            mitigations=self.mitigations,
            unsupported_ops=frozenset(o.unsupported_ops),
        )

    def target_spec(self, target: Optional[str] = None) -> BackendSpec:
        """target 未指定时由 options.optimized 决定；reference 目标同样带上全部缓解开关。"""
        if target is None:
            target = "optimized" if self.options.optimized else "reference"
        if target == "optimized":
            return self.optimized_spec()
        if target == "reference":
            return BackendSpec.reference(self.mitigations)
        raise InvalidConfigError("--target", f"must be 'optimized' or 'reference', got {target!r}")


# ---------------------------------------------------------------------------
# 标量校验
# ---------------------------------------------------------------------------


def _mapping(value: Any, key: str) -> Mapping[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise InvalidConfigError(key, f"must be a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(raw: Mapping[str, Any], allowed: Sequence[str], prefix: str = "") -> None:
    for key in raw:
        if key not in allowed:
            raise InvalidConfigError(f"{prefix}{key}", f"unknown key: {prefix}{key}")


def _bool(value: Any, key: str) -> bool:
    if not isinstance(value, bool):
        raise InvalidConfigError(key, f"must be true or false, got {value!r}")
    return value


def _int(value: Any, key: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidConfigError(key, f"must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise InvalidConfigError(key, f"must be >= {minimum}, got {value}")
    return value


def _float(value: Any, key: str) -> float:
    # YAML 1.1 把 "1e-5" 这类写法读成字符串
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise InvalidConfigError(key, f"must be a number, got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidConfigError(key, f"must be a number, got {value!r}")
    return float(value)


def _floats(value: Any, key: str) -> Tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise InvalidConfigError(key, "must be a non-empty list of numbers")
    return tuple(_float(v, f"{key}[{i}]") for i, v in enumerate(value))


def _choice(value: Any, key: str, allowed: Sequence[str]) -> str:
    if value not in allowed:
        raise InvalidConfigError(key, f"must be one of {list(allowed)}, got {value!r}")
    return str(value)


def _op_names(value: Any, key: str) -> Tuple[str, ...]:
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
        raise InvalidConfigError(key, "must be a list of op names")
    unknown = [v for v in value if v not in OP_KINDS]
    if unknown:
        raise InvalidConfigError(key, f"{unknown[0]!r} is not an op kind")
    return tuple(value)


# ---------------------------------------------------------------------------
# 分段解析
# ---------------------------------------------------------------------------


def _parse_source(raw: Mapping[str, Any]) -> str:
    if "source" in raw and "from" in raw:
        raise InvalidConfigError("from", "use either 'source' or 'from', not both")
    value = raw.get("source", raw.get("from", "builtin"))
    value = SOURCE_ALIASES.get(value, value)
    return _choice(value, "source", MODEL_SOURCES)


def _parse_inputs(value: Any, config_path: Path, default_seed: int) -> Tuple[InputSpec, ...]:
    if not isinstance(value, list) or not value:
        raise InvalidConfigError("inputs", "must be a non-empty list")
    specs: List[InputSpec] = []
    for i, item in enumerate(value):
        key = f"inputs[{i}]"
        if isinstance(item, str):
            specs.append(resolve_path(config_path, item))
            continue
        item = _mapping(item, key)
        _reject_unknown(item, SYNTHETIC_INPUT_KEYS, f"{key}.")
        shape = item.get("shape")
        if not isinstance(shape, list) or len(shape) not in (3, 4):
            raise InvalidConfigError(f"{key}.shape", "must be a list of 3 or 4 extents")
        extents = tuple(_int(s, f"{key}.shape", minimum=1) for s in shape)
        seed = _int(item.get("seed", default_seed), f"{key}.seed", minimum=0)
        specs.append(SyntheticInput(shape=extents, seed=seed))
    return tuple(specs)


def _parse_options(raw: Mapping[str, Any]) -> Options:
    _reject_unknown(raw, OPTION_KEYS, "options.")
    if "optimized" in raw and "compile" in raw:
        raise InvalidConfigError("options.compile", "use either 'optimized' or its alias 'compile', not both")
    d = CONFIG_DEFAULTS
    resize = raw.get("resize_multiple", d["resize_multiple"])
    return Options(
        optimized=_bool(raw.get("optimized", raw.get("compile", d["optimized"])), "options.optimized"),
        resize_multiple=None if resize is None else _int(resize, "options.resize_multiple", minimum=1),
        precision=_choice(raw.get("precision", d["precision"]), "options.precision", ("full", "reduced")),
        repeats=_int(raw.get("repeats", d["repeats"]), "options.repeats", minimum=1),
        warmup=_bool(raw.get("warmup", d["warmup"]), "options.warmup"),
        normalize=_bool(raw.get("normalize", d["normalize"]), "options.normalize"),
        reduction_order=_choice(
            raw.get("reduction_order", d["reduction_order"]), "options.reduction_order", ("sequential", "pairwise")
        ),
        fuse_conv_relu=_bool(raw.get("fuse_conv_relu", d["fuse_conv_relu"]), "options.fuse_conv_relu"),
        nms_order=_choice(raw.get("nms_order", d["nms_order"]), "options.nms_order", ("stable", "unstable")),
        unsupported_ops=_op_names(raw.get("unsupported_ops", []), "options.unsupported_ops"),
    )


def _parse_verification(raw: Mapping[str, Any]) -> VerificationConfig:
    _reject_unknown(raw, VERIFICATION_KEYS, "verification.")
    tol_raw = _mapping(raw.get("tol"), "verification.tol")
    _reject_unknown(tol_raw, TOL_KEYS, "verification.tol.")
    tol = ToleranceSpec(
        atol=_float(tol_raw.get("atol", CONFIG_DEFAULTS["atol"]), "verification.tol.atol"),
        rtol=_float(tol_raw.get("rtol", CONFIG_DEFAULTS["rtol"]), "verification.tol.rtol"),
    )
    thresholds_raw = _mapping(raw.get("task_thresholds"), "verification.task_thresholds")
    _reject_unknown(thresholds_raw, tuple(TaskThresholds.__dataclass_fields__), "verification.task_thresholds.")
    return VerificationConfig(
        tol=tol,
        mode=_choice(raw.get("mode", CONFIG_DEFAULTS["mode"]), "verification.mode", VERIFICATION_MODES),
        capture_activations=_bool(
            raw.get("capture_activations", CONFIG_DEFAULTS["capture_activations"]), "verification.capture_activations"
        ),
        task_thresholds=TaskThresholds(**thresholds_raw),
    )


def _parse_mitigations(raw: Mapping[str, Any]) -> MitigationSet:
    _reject_unknown(raw, MITIGATION_KEYS, "mitigations.")
    return MitigationSet(
        pre_nms_sort=_bool(raw.get("pre_nms_sort", False), "mitigations.pre_nms_sort"),
        force_full_precision=_bool(raw.get("force_full_precision", False), "mitigations.force_full_precision"),
        eager_fallback_ops=frozenset(_op_names(raw.get("eager_fallback_ops", []), "mitigations.eager_fallback_ops")),
    )


def parse_config(raw: Mapping[str, Any], path: Union[str, Path]) -> RunConfig:
    """把已解析的 YAML mapping 转为 RunConfig。path 用于解析相对路径。"""
    path = Path(path).resolve()
    _reject_unknown(raw, TOP_LEVEL_KEYS)
    source = _parse_source(raw)

    model = raw.get("model")
    if not isinstance(model, str) or not model:
        raise InvalidConfigError("model", "is required")
    if source == "builtin":
        _choice(model, "model", tuple(BUILTIN_MODELS))
    else:
        model = str(resolve_path(path, model))

    seed = _int(raw.get("seed", CONFIG_DEFAULTS["seed"]), "seed", minimum=0)
    means = _floats(raw.get("means", CONFIG_DEFAULTS["means"]), "means")
    stds = _floats(raw.get("stds", CONFIG_DEFAULTS["stds"]), "stds")
    if len(means) != len(stds):
        raise InvalidConfigError("stds", f"has {len(stds)} entries but means has {len(means)}")
    if any(s == 0.0 for s in stds):
        raise InvalidConfigError("stds", "standard deviations must be nonzero")

    params = _mapping(raw.get("params"), "params")
    if params and source != "builtin":
        raise InvalidConfigError("params", "only builtin models accept params")

    return RunConfig(
        path=path,
        source=source,
        model=model,
        inputs=_parse_inputs(raw.get("inputs"), path, seed),
        means=means,
        stds=stds,
        options=_parse_options(_mapping(raw.get("options"), "options")),
        verification=_parse_verification(_mapping(raw.get("verification"), "verification")),
        mitigations=_parse_mitigations(_mapping(raw.get("mitigations"), "mitigations")),
        seed=seed,
        params=dict(params),
    )


def load_config(path: Union[str, Path]) -> RunConfig:
    """读取并校验一个运行配置文件。"""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigParseError(str(path), f"malformed YAML: {e}") from e
    if not isinstance(raw, Mapping):
        raise ConfigParseError(str(path), "top level must be a mapping")
    return parse_config(raw, path)


def resolve_path(config_path: Union[str, Path], rel: Union[str, Path]) -> Path:
    """绝对路径原样返回；相对路径按配置文件所在目录拼接并规范化。"""
    rel = Path(rel).expanduser()
    if rel.is_absolute():
        return rel
    base = Path(config_path).expanduser().absolute().parent
    return Path(os.path.normpath(base / rel))


def expand_glob(pattern: str) -> List[Path]:
    """按字典序返回匹配的配置路径；存在的字面路径也算匹配。"""
    matches = sorted(glob.glob(pattern))
    if not matches and os.path.isfile(pattern):
        matches = [pattern]
    return [Path(m) for m in matches]


__all__ = [
    "SyntheticInput",
    "InputSpec",
    "Options",
    "VerificationConfig",
    "RunConfig",
    "parse_config",
    "load_config",
    "resolve_path",
    "expand_glob",
]
