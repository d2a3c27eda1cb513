"""
driftcheck：推理后端行为漂移的差分测试工具。
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
