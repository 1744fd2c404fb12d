"""Dense tensor storage and npy file I/O.

Only little-endian float32/float64 in C order is supported. Files are
written as npy v1.0; v1.0 and v2.0 are accepted on read.
"""

from __future__ import annotations

import ast
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Tuple, Union

import numpy as np

MAGIC = b"\x93NUMPY"
ALIGN = 64
MAX_AXES = 4
_DESCR_TO_DTYPE = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}
_DTYPE_TO_DESCR = {v: k for k, v in _DESCR_TO_DTYPE.items()}

PathLike = Union[str, "os.PathLike[str]"]


class TensorFormatError(ValueError):
    """Raised when a tensor file or array cannot be represented."""


@dataclass(frozen=True)
class Shape3:
    """Extents of the (frames, width, height) grid."""

    t: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("t", "w", "h"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"Shape3.{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    @classmethod
    def of(cls, shape: Union["Shape3", Iterable[int]]) -> "Shape3":
        if isinstance(shape, Shape3):
            return shape
        t, w, h = tuple(shape)[:3]
        return cls(t, w, h)

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.t, self.w, self.h)

    @property
    def size(self) -> int:
        return self.t * self.w * self.h


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable row-major float tensor.

    Wraps a read-only C-contiguous ndarray. Supports ``np.asarray`` so the
    kernels accept it anywhere an array is expected.
    """

    array: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.array)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
        if dtype not in _DTYPE_TO_DESCR:
            raise TensorFormatError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
        if arr.ndim > MAX_AXES:
            raise TensorFormatError(f"at most {MAX_AXES} axes supported, got {arr.ndim}")
        arr = np.array(arr, dtype=dtype, order="C", copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.array.shape

    @property
    def dtype(self) -> np.dtype:
        return self.array.dtype

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the payload."""
        return self.array.reshape(-1)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.array
        return self.array.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.dtype == other.dtype
            and self.array.tobytes() == other.array.tobytes()
        )

    __hash__ = None


def flat_index(index: Iterable[int], shape: Iterable[int]) -> int:
    """Row-major offset of ``index`` in a tensor of ``shape`` (last axis fastest)."""
    offset = 0
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise IndexError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
        offset = offset * n + i
    return offset


def _header_bytes(descr: str, shape: Tuple[int, ...]) -> bytes:
    header = "{'descr': %r, 'fortran_order': False, 'shape': %r, }" % (descr, tuple(shape))
    # magic(6) + version(2) + length(2) + header + '\n' must be a multiple of ALIGN
    total = len(MAGIC) + 2 + 2 + len(header) + 1
    header += " " * ((-total) % ALIGN) + "\n"
    encoded = header.encode("latin1")
    if len(encoded) > 0xFFFF:
        raise TensorFormatError("header too long for npy v1.0")
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(encoded)) + encoded


def write_tensor(t: Union[Tensor, np.ndarray], path: PathLike) -> None:
    """Write ``t`` as an npy v1.0 file."""
    if not isinstance(t, Tensor):
        t = Tensor(t)
    descr = _DTYPE_TO_DESCR[t.dtype]
    with open(path, "wb") as fh:
        fh.write(_header_bytes(descr, t.shape))
        fh.write(t.array.tobytes(order="C"))


def _parse_header(raw: bytes) -> Tuple[np.dtype, Tuple[int, ...]]:
    try:
        header = ast.literal_eval(raw.decode("latin1"))
    except (SyntaxError, ValueError, UnicodeDecodeError) as exc:
        raise TensorFormatError(f"malformed header: {exc}") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise TensorFormatError(f"malformed header: {header!r}")
    if header["fortran_order"] is not False:
        raise TensorFormatError("unsupported layout: fortran_order must be False")
    descr = header["descr"]
    if descr not in _DESCR_TO_DTYPE:
        raise TensorFormatError(f"unsupported dtype {descr!r}; expected '<f4' or '<f8'")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(n, int) and not isinstance(n, bool) and n >= 0 for n in shape
    ):
        raise TensorFormatError(f"malformed header: bad shape {shape!r}")
    if len(shape) > MAX_AXES:
        raise TensorFormatError(f"at most {MAX_AXES} axes supported, got {len(shape)}")
    return _DESCR_TO_DTYPE[descr], shape


def read_tensor(path: PathLike) -> Tensor:
    """Read an npy v1.0/v2.0 file into a :class:`Tensor`.

    Raises TensorFormatError for malformed headers, Fortran order,
    unsupported dtypes, truncated payloads, and non-finite values.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != MAGIC or len(blob) < 10:
        raise TensorFormatError("malformed header: missing npy magic")
    major, minor = blob[6], blob[7]
    if (major, minor) == (1, 0):
        (hlen,) = struct.unpack("<H", blob[8:10])
        start = 10
    elif (major, minor) == (2, 0):
        if len(blob) < 12:
            raise TensorFormatError("malformed header: truncated")
        (hlen,) = struct.unpack("<I", blob[8:12])
        start = 12
    else:
        raise TensorFormatError(f"malformed header: unsupported npy version {major}.{minor}")
    end = start + hlen
    if len(blob) < end:
        raise TensorFormatError("malformed header: truncated")
    dtype, shape = _parse_header(blob[start:end])
    count = int(np.prod(shape, dtype=np.int64))
    payload = blob[end:]
    if len(payload) != count * dtype.itemsize:
        raise TensorFormatError(
            f"payload is {len(payload)} bytes, expected {count * dtype.itemsize} for shape {shape}"
        )
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("non-finite value in payload")
    return Tensor(arr)
