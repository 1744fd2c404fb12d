"""Input checks shared by the kernels and estimators."""

import numpy as np

_FLOATS = (np.float32, np.float64)


def as_float_array(x, name, ndim=None, min_ndim=None):
    """Return ``x`` as a finite C-contiguous float32/float64 array."""
    arr = np.asarray(x)
    if arr.dtype.type not in _FLOATS:
        if arr.dtype.kind in "biu" or arr.dtype == object:
            arr = arr.astype(np.float64)
        else:
            raise TypeError(f"{name} must be float32 or float64, got {arr.dtype}")
    arr = np.ascontiguousarray(arr)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} axes, got shape {arr.shape}")
    if min_ndim is not None and arr.ndim < min_ndim:
        raise ValueError(f"{name} must have at least {min_ndim} axes, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_video(v, name="video"):
    """Validate a T x W x H x D feature grid."""
    v = as_float_array(v, name, ndim=4)
    if min(v.shape) < 1:
        raise ValueError(f"{name} extents must all be >= 1, got {v.shape}")
    return v


def check_scores(s, grid, name="scores"):
    """Validate a T x W x H score grid against the video's leading extents."""
    s = as_float_array(s, name, ndim=3)
    if s.shape != tuple(grid):
        raise ValueError(f"{name} shape {s.shape} does not match video grid {tuple(grid)}")
    if np.any(s < 0):
        raise ValueError(f"{name} must be non-negative")
    return s


def check_triple(value, name):
    try:
        triple = tuple(int(x) for x in value)
    except TypeError:
        raise TypeError(f"{name} must be a sequence of three integers, got {value!r}") from None
    if len(triple) != 3 or any(x < 1 for x in triple) or any(int(a) != a for a in value):
        raise ValueError(f"{name} must be three positive integers, got {value!r}")
    return triple


def result_dtype(*arrays):
    return np.result_type(*arrays)
