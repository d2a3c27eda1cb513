"""
driftcheck 的异常类型。

形状 / 配置 / 图结构错误同时继承 ValueError，调用方按 ValueError 捕获依然成立。
"""

from __future__ import annotations

from typing import Optional


class DriftCheckError(Exception):
    """所有 driftcheck 异常的基类。"""


class ShapeError(DriftCheckError, ValueError):
    """张量形状不匹配或秩不合法。node_id 可指明出错的图节点。"""

    def __init__(self, message: str, node_id: Optional[str] = None):
        self.node_id = node_id
        if node_id:
            message = f"node {node_id!r}: {message}"
        super().__init__(message)


class FormatError(DriftCheckError, ValueError):
    """DRFT 张量文件损坏：魔数、版本或长度不对。"""


class EmptyReductionError(DriftCheckError, ValueError):
    """对空序列做归约。"""


class InvalidConfigError(DriftCheckError, ValueError):
    """配置不合法，key 为出错的配置键路径（如 options.repeats）。"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class ConfigParseError(DriftCheckError, ValueError):
    """YAML 语法错误，或顶层不是 mapping。"""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class GraphError(DriftCheckError, ValueError):
    """图结构错误：悬空引用、拓扑顺序违例、节点集合不一致等。"""


class UnsupportedOpError(DriftCheckError):
    """算子不受支持。op_name 用于失败分类统计。"""

    def __init__(self, op_name: str, message: Optional[str] = None):
        self.op_name = op_name
        super().__init__(message or op_name)


class LogWriteError(DriftCheckError):
    """JSONL 写入失败。"""


class LogReadError(DriftCheckError):
    """JSONL 文件无法读取。"""


class EmptyReportError(DriftCheckError, ValueError):
    """没有记录可供汇总。"""


__all__ = [
    "DriftCheckError",
    "ShapeError",
    "FormatError",
    "EmptyReductionError",
    "InvalidConfigError",
    "ConfigParseError",
    "GraphError",
    "UnsupportedOpError",
    "LogWriteError",
    "LogReadError",
    "EmptyReportError",
]
