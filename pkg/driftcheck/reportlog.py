"""
JSONL 结果记录与汇总报告。

负责：
- RunRecord / EnvFingerprint（pydantic 模型）；
- 追加写入（单一串行写者，时间戳在写入时生成）与容错读取；
- 汇总表：总体、按 atol、模型 × 目标后端、失败分类、各后端延迟中位数；
- 渲染为 markdown 或 CSV（每张表一个文件）。
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import platform
import sys
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from driftcheck import __version__
from driftcheck.constants import FAILURE_CATEGORIES
from driftcheck.errors import EmptyReportError, LogReadError, LogWriteError
from driftcheck.seeding import determinism_flags

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

_write_lock = threading.Lock()


class EnvFingerprint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    harness_version: str
    os: str
    cpu: str
    logical_cores: int
    python: str
    numpy: str
    determinism: Dict[str, str]
    seed: int


class RunRecord(BaseModel):
    """一次 (config, 后端对, 容差) 检查的结果，对应 JSONL 的一行。"""

    model_config = ConfigDict(extra="forbid")

    timestamp: str = ""
    config: str
    model: str
    backend_pair: str
    atol: float
    rtol: float
    status: Literal["PASS", "FAIL", "ERROR"]
    max_abs_diff: Optional[float] = None
    mae: Optional[float] = None
    p95_abs_diff: Optional[float] = None
    tier2_first_divergence: Optional[str] = None
    task: Optional[str] = None
    top1_match: Optional[bool] = None
    topk_agreement: Optional[float] = None
    miou: Optional[float] = None
    detection_f1: Optional[float] = None
    task_pass: Optional[bool] = None
    taxonomy: str
    latency_ms_ref: Optional[float] = None
    latency_ms_tgt: Optional[float] = None
    seed: int
    env: EnvFingerprint
    error_message: Optional[str] = None

    @model_validator(mode="after")
    def _check_status(self) -> "RunRecord":
        if self.taxonomy not in FAILURE_CATEGORIES:
            raise ValueError(f"unknown taxonomy {self.taxonomy!r}")
        if self.status == "PASS" and self.taxonomy != "NONE":
            raise ValueError("PASS records must have taxonomy NONE")
        if self.status == "ERROR" and not self.error_message:
            raise ValueError("ERROR records must carry error_message")
        return self

    @property
    def backends(self) -> Tuple[str, str]:
        ref, _, tgt = self.backend_pair.partition("->")
        return ref, tgt

    def to_json_line(self) -> str:
        """ERROR 记录省略差异统计；其余记录总是带 tier2_first_divergence（可为 null）。"""
        data = self.model_dump(exclude_none=True)
        if self.status != "ERROR":
            data["tier2_first_divergence"] = self.tier2_first_divergence
        else:
            for key in ("max_abs_diff", "mae", "p95_abs_diff"):
                data.pop(key, None)
        ordered = {name: data[name] for name in type(self).model_fields if name in data}
        return json.dumps(ordered, ensure_ascii=False)


# ---------------------------------------------------------------------------
# 写入 / 读取
# ---------------------------------------------------------------------------


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).strftime(TIMESTAMP_FORMAT)


def append_record(record: RunRecord, path: Union[str, Path]) -> RunRecord:
    """追加一行并返回带写入时间戳的记录。"""
    path = Path(path)
    stamped = record.model_copy(update={"timestamp": utc_timestamp()})
    line = stamped.to_json_line() + "\n"
    with _write_lock:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("a", encoding="utf-8") as f:
                f.write(line)
        except OSError as e:
            raise LogWriteError(f"cannot append to {path}: {e}") from e
    return stamped


def read_records(path: Union[str, Path]) -> Tuple[List[RunRecord], int]:
    """读取全部记录，返回 (records, 跳过的坏行数)。坏行按行号记 warning。"""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise LogReadError(f"cannot read {path}: {e}") from e

    records: List[RunRecord] = []
    skipped = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as e:
            skipped += 1
            logger.warning("%s:%d: skipping malformed record (%s)", path, lineno, type(e).__name__)
    return records, skipped


# ---------------------------------------------------------------------------
# 环境指纹
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo", "r", encoding="utf-8") as f:
            for line in f:
                if line.lower().startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def _or_unknown(value: Any) -> str:
    text = str(value).strip() if value is not None else ""
    return text or "unknown"


def env_fingerprint(seed: int) -> EnvFingerprint:
    """收集主机与运行时信息；拿不到的字段记为 "unknown"。"""
    try:
        cpu = _cpu_model()
    except Exception:  # noqa: BLE001
        cpu = ""
    return EnvFingerprint(
        harness_version=_or_unknown(__version__),
        os=_or_unknown(platform.platform()),
        cpu=_or_unknown(cpu),
        logical_cores=os.cpu_count() or 1,
        python=_or_unknown(sys.version.split()[0]),
        numpy=_or_unknown(np.__version__),
        determinism=determinism_flags(),
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# 汇总
# ---------------------------------------------------------------------------


def pass_pct(passed: int, total: int) -> float:
    return round(100.0 * passed / total, 1) if total else 0.0


@dataclass(frozen=True)
class CountRow:
    total: int
    passed: int

    @property
    def pass_rate(self) -> float:
        return self.passed / self.total if self.total else 0.0

    @property
    def pass_pct(self) -> float:
        return pass_pct(self.passed, self.total)


@dataclass(frozen=True)
class AtolRow(CountRow):
    atol: float = 0.0


@dataclass(frozen=True)
class ModelBackendRow(CountRow):
    model: str = ""
    backend: str = ""


@dataclass(frozen=True)
class SummaryTables:
    overall: CountRow
    by_atol: List[AtolRow] = field(default_factory=list)
    by_model_backend: List[ModelBackendRow] = field(default_factory=list)
    taxonomy_counts: Dict[str, int] = field(default_factory=dict)
    latency: Dict[str, float] = field(default_factory=dict)

    def atol_monotone(self) -> bool:
        counts = [row.passed for row in self.by_atol]
        return all(a <= b for a, b in zip(counts, counts[1:]))


def _lower_median(values: List[float]) -> float:
    values = sorted(values)
    return values[(len(values) - 1) // 2]


def summarize(records: Iterable[RunRecord]) -> SummaryTables:
    """汇总记录。ERROR 计入 total，不计入 passed。结果与记录顺序无关。"""
    records = list(records)
    if not records:
        raise EmptyReportError("no records to summarize")

    def count(rows: List[RunRecord]) -> Tuple[int, int]:
        return len(rows), sum(1 for r in rows if r.status == "PASS")

    by_atol: Dict[float, List[RunRecord]] = defaultdict(list)
    by_cell: Dict[Tuple[str, str], List[RunRecord]] = defaultdict(list)
    latencies: Dict[str, List[float]] = defaultdict(list)
    for r in records:
        by_atol[r.atol].append(r)
        ref, tgt = r.backends
        by_cell[(r.model, tgt)].append(r)
        if r.latency_ms_ref is not None:
            latencies[ref].append(r.latency_ms_ref)
        if r.latency_ms_tgt is not None:
            latencies[tgt].append(r.latency_ms_tgt)

    taxonomy = Counter(r.taxonomy for r in records)
    tables = SummaryTables(
        overall=CountRow(*count(records)),
        by_atol=[AtolRow(*count(by_atol[a]), atol=a) for a in sorted(by_atol)],
        by_model_backend=[
            ModelBackendRow(*count(by_cell[key]), model=key[0], backend=key[1]) for key in sorted(by_cell)
        ],
        taxonomy_counts={c: taxonomy.get(c, 0) for c in FAILURE_CATEGORIES},
        latency={name: _lower_median(values) for name, values in sorted(latencies.items())},
    )
    if not tables.atol_monotone():
        logger.warning("pass counts decrease with atol: %s", [row.passed for row in tables.by_atol])
    return tables


# ---------------------------------------------------------------------------
# 渲染
# ---------------------------------------------------------------------------


def _fmt_atol(atol: float) -> str:
    return f"{atol:g}"


def _md_table(header: List[str], rows: List[List[Any]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return lines


def _render_markdown(t: SummaryTables) -> str:
    out: List[str] = ["# Drift check report", ""]
    out += ["## Overall", ""]
    out += _md_table(
        ["Total", "Passed", "Pass %"], [[t.overall.total, t.overall.passed, f"{t.overall.pass_pct:.1f}"]]
    )
    out += ["", "## Pass rate by atol", ""]
    out += _md_table(
        ["atol", "Total", "Passed", "Pass %"],
        [[_fmt_atol(r.atol), r.total, r.passed, f"{r.pass_pct:.1f}"] for r in t.by_atol],
    )
    out += ["", "## Pass rate by model and target backend", ""]
    out += _md_table(
        ["Model", "Target backend", "Total", "Passed", "Pass %"],
        [[r.model, r.backend, r.total, r.passed, f"{r.pass_pct:.1f}"] for r in t.by_model_backend],
    )
    out += ["", "## Failure taxonomy", ""]
    out += _md_table(["Category", "Count"], [[c, n] for c, n in t.taxonomy_counts.items()])
    out += ["", "## Median latency by backend", ""]
    out += _md_table(["Backend", "Median latency (ms)"], [[b, f"{ms:.3f}"] for b, ms in t.latency.items()])
    return "\n".join(out) + "\n"


def _csv(header: List[str], rows: List[List[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _render_csv(t: SummaryTables) -> Dict[str, str]:
    return {
        "overall.csv": _csv(
            ["total", "passed", "pass_rate", "pass_pct"],
            [[t.overall.total, t.overall.passed, repr(t.overall.pass_rate), t.overall.pass_pct]],
        ),
        "by_atol.csv": _csv(
            ["atol", "total", "passed", "pass_pct"],
            [[_fmt_atol(r.atol), r.total, r.passed, r.pass_pct] for r in t.by_atol],
        ),
        "by_model_backend.csv": _csv(
            ["model", "backend", "total", "passed", "pass_pct"],
            [[r.model, r.backend, r.total, r.passed, r.pass_pct] for r in t.by_model_backend],
        ),
        "taxonomy.csv": _csv(["category", "count"], [[c, n] for c, n in t.taxonomy_counts.items()]),
        "latency.csv": _csv(["backend", "median_ms"], [[b, repr(ms)] for b, ms in t.latency.items()]),
    }


def render_report(tables: SummaryTables, fmt: str = "md") -> Dict[str, str]:
    """返回 {文件名: 内容}。md 为单个 report.md，csv 每张表一个文件。"""
    if fmt == "md":
        return {"report.md": _render_markdown(tables)}
    if fmt == "csv":
        return _render_csv(tables)
    raise ValueError(f"format must be 'md' or 'csv', got {fmt!r}")


__all__ = [
    "TIMESTAMP_FORMAT",
    "EnvFingerprint",
    "RunRecord",
    "append_record",
    "read_records",
    "env_fingerprint",
    "pass_pct",
    "CountRow",
    "AtolRow",
    "ModelBackendRow",
    "SummaryTables",
    "summarize",
    "render_report",
]
