import itertools
import struct

import numpy as np
import pytest
from numpy.lib import format as npformat

from promptpool.tensor import (
    Shape3,
    Tensor,
    TensorFormatError,
    flat_index,
    read_tensor,
    write_tensor,
)

from oracles import nested_flat_index_table


def _raw_npy(header: str, payload: bytes, version=(1, 0)) -> bytes:
    body = header.encode("latin1")
    if version == (1, 0):
        return b"\x93NUMPY\x01\x00" + struct.pack("<H", len(body)) + body + payload
    return b"\x93NUMPY\x02\x00" + struct.pack("<I", len(body)) + body + payload


def test_round_trip_small_float32(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3) / 7
    path = tmp_path / "a.npy"
    write_tensor(Tensor(arr), path)
    t = read_tensor(path)
    assert t.shape == (2, 3)
    assert t.dtype == np.float32
    assert t.array.tobytes() == arr.tobytes()


def test_minimal_tensor_layout(tmp_path):
    path = tmp_path / "one.npy"
    write_tensor(Tensor(np.zeros(1, dtype=np.float32)), path)
    blob = path.read_bytes()
    assert blob[:8] == b"\x93NUMPY\x01\x00"
    assert len(blob) == 128 + 4
    assert blob[-4:] == b"\x00" * 4


def test_header_is_64_byte_aligned(tmp_path):
    for shape in [(1,), (3, 5), (2, 3, 4, 5), (0, 5), ()]:
        path = tmp_path / "x.npy"
        write_tensor(Tensor(np.zeros(shape)), path)
        blob = path.read_bytes()
        (hlen,) = struct.unpack("<H", blob[8:10])
        assert (10 + hlen) % 64 == 0
        assert blob[10 + hlen - 1:10 + hlen] == b"\n"


def test_empty_extent(tmp_path):
    path = tmp_path / "empty.npy"
    write_tensor(Tensor(np.zeros((0, 5), dtype=np.float64)), path)
    blob = path.read_bytes()
    (hlen,) = struct.unpack("<H", blob[8:10])
    assert len(blob) == 10 + hlen
    assert read_tensor(path).shape == (0, 5)
    assert np.load(path).shape == (0, 5)


def test_large_header_shape(tmp_path):
    shape = (32, 24, 24, 1024)
    path = tmp_path / "big.npy"
    write_tensor(Tensor(np.zeros(shape, dtype=np.float32)), path)
    with open(path, "rb") as fh:
        npformat.read_magic(fh)
        parsed_shape, fortran, dtype = npformat.read_array_header_1_0(fh)
    assert parsed_shape == shape and not fortran and dtype == np.float32
    t = read_tensor(path)
    assert t.data.size == 18_874_368 == int(np.prod(parsed_shape))


def test_fortran_order_rejected(tmp_path):
    path = tmp_path / "f.npy"
    np.save(path, np.asfortranarray(np.ones((3, 2))))
    with pytest.raises(TensorFormatError, match="unsupported layout"):
        read_tensor(path)


@pytest.mark.parametrize("dtype", [np.int32, np.float16, ">f8", np.complex128])
def test_unsupported_dtype_rejected(tmp_path, dtype):
    path = tmp_path / "d.npy"
    np.save(path, np.ones(3, dtype=dtype))
    with pytest.raises(TensorFormatError, match="unsupported dtype"):
        read_tensor(path)


def test_non_finite_payload_rejected(tmp_path):
    path = tmp_path / "nan.npy"
    np.save(path, np.array([1.0, np.nan]))
    with pytest.raises(TensorFormatError, match="non-finite"):
        read_tensor(path)


@pytest.mark.parametrize(
    "blob",
    [
        b"not an npy file",
        _raw_npy("{'descr': '<f8', 'shape': (2,), }\n", b"\0" * 16),
        _raw_npy("{'descr': '<f8', 'fortran_order': False, 'shape': (2,), }\n", b"\0" * 8),
        _raw_npy("{'descr': '<f8', 'fortran_order': False, 'shape': (-1,), }\n", b""),
        _raw_npy("garbage(\n", b""),
        b"\x93NUMPY\x03\x00" + b"\0" * 20,
    ],
)
def test_malformed_files(tmp_path, blob):
    path = tmp_path / "bad.npy"
    path.write_bytes(blob)
    with pytest.raises(TensorFormatError):
        read_tensor(path)


def test_reads_version_2(tmp_path):
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }"
    header += " " * ((-(12 + len(header) + 1)) % 64) + "\n"
    payload = np.array([1.5, -2.0], dtype="<f4").tobytes()
    path = tmp_path / "v2.npy"
    path.write_bytes(_raw_npy(header, payload, version=(2, 0)))
    np.testing.assert_array_equal(read_tensor(path).array, [1.5, -2.0])


def test_random_round_trips_parse_in_numpy(tmp_path):
    rng = np.random.default_rng(0)
    for n in range(100):
        ndim = int(rng.integers(0, 5))
        shape = tuple(int(x) for x in rng.integers(0, 5, size=ndim))
        dtype = np.float64 if n % 2 else np.float32
        arr = (rng.standard_normal(shape) * 10 ** rng.uniform(-30, 30)).astype(dtype)
        path = tmp_path / f"r{n}.npy"
        write_tensor(arr, path)
        back = read_tensor(path)
        assert back == Tensor(arr)
        independent = np.load(path)
        assert independent.dtype == dtype and independent.shape == shape
        assert independent.tobytes() == arr.tobytes()


def test_negative_zero_and_subnormals_survive(tmp_path):
    arr = np.array([-0.0, 5e-324, -5e-324, np.finfo(np.float64).max])
    path = tmp_path / "edge.npy"
    write_tensor(arr, path)
    assert read_tensor(path).array.tobytes() == arr.tobytes()


def test_flat_index_all_small_shapes():
    for ndim in range(1, 5):
        for shape in itertools.product(range(1, 5), repeat=ndim):
            table = nested_flat_index_table(shape)
            arr = np.arange(len(table)).reshape(shape)
            for idx, order in table.items():
                assert flat_index(idx, shape) == order == arr[idx]


def test_flat_index_formula_4d():
    T, W, H, D = 3, 4, 2, 5
    assert flat_index((2, 3, 1, 4), (T, W, H, D)) == ((2 * W + 3) * H + 1) * D + 4
    with pytest.raises(IndexError):
        flat_index((3, 0, 0, 0), (T, W, H, D))


def test_tensor_is_immutable():
    t = Tensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        t.array[0, 0] = 1.0
    assert t.data.size == 4


def test_tensor_rejects_bad_inputs():
    with pytest.raises(TensorFormatError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))
    with pytest.raises(TensorFormatError):
        Tensor(np.zeros(3, dtype=np.int64))


def test_shape3():
    s = Shape3(32, 24, 24)
    assert s.size == 18432
    assert Shape3.of((1, 2, 3, 99)).as_tuple() == (1, 2, 3)
    with pytest.raises(ValueError):
        Shape3(0, 1, 1)
