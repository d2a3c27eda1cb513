"""
DRFT 张量文件读写。

格式（小端）：
    magic  "DRFT"      4 字节
    version u32 = 1
    dtype   u8          0=F32, 1=F64
    rank    u8
    padding 2 字节 0
    extents u64 × rank
    payload 行主序
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from driftcheck.errors import FormatError
from driftcheck.tensor import MAX_RANK, DType, Tensor, product

MAGIC = b"DRFT"
VERSION = 1

_HEADER = struct.Struct("<4sIBBxx")
_DTYPE_CODES = {DType.F32: 0, DType.F64: 1}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


def encode_tensor(x: Tensor) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[x.dtype], x.rank)
    extents = struct.pack(f"<{x.rank}Q", *x.shape)
    payload = x.array.astype(x.dtype.numpy.newbyteorder("<"), copy=False).tobytes(order="C")
    return header + extents + payload


def decode_tensor(raw: bytes) -> Tensor:
    if len(raw) < _HEADER.size:
        raise FormatError(f"truncated header: {len(raw)} bytes")
    magic, version, code, rank = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds maximum {MAX_RANK}")

    offset = _HEADER.size
    extents_size = 8 * rank
    if len(raw) < offset + extents_size:
        raise FormatError("truncated extents")
    shape = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += extents_size

    dtype = _CODE_DTYPES[code]
    expected = product(shape) * dtype.numpy.itemsize
    payload = raw[offset:]
    if len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype.numpy.newbyteorder("<")).astype(dtype.numpy)
    try:
        return Tensor(arr.reshape(shape))
    except ValueError as exc:
        raise FormatError(f"invalid payload: {exc}") from exc


def write_tensor_file(x: Tensor, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(x))


def read_tensor_file(path: Union[str, Path]) -> Tensor:
    """读取 DRFT 文件。文件不存在时抛 FileNotFoundError（调用方负责归类）。"""
    return decode_tensor(Path(path).read_bytes())


__all__ = ["MAGIC", "VERSION", "encode_tensor", "decode_tensor", "write_tensor_file", "read_tensor_file"]
