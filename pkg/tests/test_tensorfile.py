import struct

import numpy as np
import pytest

from driftcheck.errors import FormatError
from driftcheck.tensor import DType, Tensor
from driftcheck.tensorfile import MAGIC, decode_tensor, encode_tensor, read_tensor_file, write_tensor_file
from tests.helpers import ROOT


def test_header_layout():
    raw = encode_tensor(Tensor.of([[1.0, 2.0, 3.0]]))
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<IBB", raw, 4) == (1, 0, 2)
    assert struct.unpack_from("<2Q", raw, 12) == (1, 3)
    assert len(raw) == 12 + 16 + 3 * 4


def test_f64_roundtrip_preserves_bits(tmp_path):
    x = Tensor(np.array([[0.1, -2.5], [1e-300, 3.0]], dtype=np.float64))
    path = tmp_path / "x.drft"
    write_tensor_file(x, path)
    y = read_tensor_file(path)
    assert y.dtype is DType.F64
    assert y.bitwise_equal(x)


@pytest.mark.parametrize("dtype", [DType.F32, DType.F64])
@pytest.mark.parametrize("shape", [(), (3,), (2, 3), (2, 1, 3), (1, 2, 2, 3)])
def test_roundtrip_every_rank(dtype, shape):
    values = np.linspace(-1.5, 2.5, num=int(np.prod(shape))) * 1e-3 + 1.0 / 3.0
    x = Tensor(values.astype(dtype.numpy).reshape(shape))
    y = decode_tensor(encode_tensor(x))
    assert y.dtype is dtype
    assert y.shape == shape
    assert y.bitwise_equal(x)


def test_bundled_cancellation_probe_input():
    x = read_tensor_file(ROOT / "data" / "cancellation_probe.drft")
    assert x.shape == (1, 4)
    assert x.array.ravel().tolist() == [8192.0, 2.0**-11, 2.0**-11, -8192.0]


@pytest.mark.parametrize(
    "mutate",
    [
        lambda raw: b"XXXX" + raw[4:],
        lambda raw: raw[:4] + struct.pack("<I", 2) + raw[8:],
        lambda raw: raw[:8] + b"\x07" + raw[9:],
        lambda raw: raw[:-1],
        lambda raw: raw[:10],
    ],
    ids=["magic", "version", "dtype", "payload", "header"],
)
def test_corrupt_files(mutate):
    raw = encode_tensor(Tensor.of([1.0, 2.0]))
    with pytest.raises(FormatError):
        decode_tensor(mutate(raw))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_payload_is_format_error(bad):
    raw = bytearray(encode_tensor(Tensor.of([1.0, 2.0])))
    raw[-4:] = np.array([bad], dtype="<f4").tobytes()
    with pytest.raises(FormatError):
        decode_tensor(bytes(raw))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_tensor_file(tmp_path / "nope.drft")
