"""Longer positional-embedding tables from a pretrained one.

The main route interpolates source rows with a piecewise rate: a head rate
for early target positions (1.0 keeps the well-trained prefix untouched) and
a smaller tail rate that stretches the rest. Uniform interpolation and
random tail initialization are provided as baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array

CONTINUOUS = "continuous-piecewise"
LITERAL = "literal"
CONTINUITY_MODES = (CONTINUOUS, LITERAL)

DEFAULT_BOUNDARY = 20
DEFAULT_R_HEAD = 1.0
DEFAULT_R_TAIL = 0.25
DEFAULT_INIT_SCALE = 0.02


class ScheduleRangeError(ValueError):
    """A target position maps outside the source table."""

    def __init__(self, index, j, source_length):
        self.index = index
        self.j = j
        super().__init__(
            f"target index {index} maps to source position {j}, outside [0, {source_length - 1}]"
        )


@dataclass(frozen=True)
class RateSchedule:
    target_length: int
    boundary: int = DEFAULT_BOUNDARY
    r_head: float = DEFAULT_R_HEAD
    r_tail: float = DEFAULT_R_TAIL
    continuity: str = CONTINUOUS

    def __post_init__(self):
        if int(self.target_length) != self.target_length or self.target_length < 1:
            raise ValueError(f"target_length must be a positive integer, got {self.target_length}")
        if int(self.boundary) != self.boundary or self.boundary < 0:
            raise ValueError(f"boundary must be a non-negative integer, got {self.boundary}")
        if self.target_length < self.boundary:
            raise ValueError(
                f"target_length {self.target_length} is shorter than boundary {self.boundary}"
            )
        for name in ("r_head", "r_tail"):
            r = getattr(self, name)
            if not math.isfinite(r) or r <= 0:
                raise ValueError(f"{name} must be positive, got {r}")
        if self.continuity not in CONTINUITY_MODES:
            raise ValueError(f"unknown continuity {self.continuity!r}")
        object.__setattr__(self, "target_length", int(self.target_length))
        object.__setattr__(self, "boundary", int(self.boundary))
        object.__setattr__(self, "r_head", float(self.r_head))
        object.__setattr__(self, "r_tail", float(self.r_tail))

    @classmethod
    def from_dict(cls, d: dict) -> "RateSchedule":
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "boundary": self.boundary,
            "r_head": self.r_head,
            "r_tail": self.r_tail,
            "target_length": self.target_length,
            "continuity": self.continuity,
        }


def _raw_index(i, sched):
    if i < sched.boundary:
        return i * sched.r_head
    if sched.continuity == LITERAL:
        return i * sched.r_tail
    return sched.boundary * sched.r_head + (i - sched.boundary) * sched.r_tail


def map_index(i: int, sched: RateSchedule, source_length=None) -> float:
    """Source coordinate read by target row ``i``.

    ``continuous-piecewise`` continues the head segment with the tail rate,
    so the mapping is monotone. ``literal`` multiplies ``i`` by the rate in
    force at ``i``, which jumps backwards at the boundary.
    """
    if not 0 <= i < sched.target_length:
        raise IndexError(f"target index {i} outside [0, {sched.target_length})")
    j = float(_raw_index(i, sched))
    if source_length is not None and not 0 <= j <= source_length - 1:
        raise ScheduleRangeError(i, j, source_length)
    return j


def max_target_length(source_length: int, boundary=DEFAULT_BOUNDARY, r_head=DEFAULT_R_HEAD,
                      r_tail=DEFAULT_R_TAIL, continuity=CONTINUOUS) -> int:
    """Longest target table whose every row maps inside the source, by direct sweep."""
    if continuity == LITERAL:
        raise ValueError("literal mapping is not monotone; sweep it explicitly")
    i = 0
    while True:
        sched = RateSchedule(max(i + 1, boundary), boundary, r_head, r_tail, continuity)
        if map_index(i, sched) > source_length - 1:
            return i
        i += 1


def _blend_rows(p, positions):
    """Linear blend of source rows at fractional ``positions``; integer positions copy exactly."""
    L = p.shape[0]
    out = np.empty((len(positions), p.shape[1]), dtype=p.dtype)
    for row, j in enumerate(positions):
        lo = math.floor(j)
        frac = j - lo
        if frac == 0.0 or lo == L - 1:
            out[row] = p[lo]
        else:
            out[row] = p[lo] + p.dtype.type(frac) * (p[lo + 1] - p[lo])
    return out


def _check_table(p):
    p = as_float_array(p, "positional embedding table", ndim=2)
    if p.shape[0] < 2 or p.shape[1] < 1:
        raise ValueError(f"table needs at least 2 rows and 1 column, got shape {p.shape}")
    return p


def interpolate_pe(p, sched: RateSchedule) -> np.ndarray:
    """Extend ``p`` to ``sched.target_length`` rows by piecewise-rate interpolation."""
    p = _check_table(p)
    positions = [map_index(i, sched, source_length=p.shape[0]) for i in range(sched.target_length)]
    return _blend_rows(p, positions)


def uniform_interpolate_pe(p, target_length: int) -> np.ndarray:
    """Stretch ``p`` over ``target_length`` rows with one rate; endpoints map to endpoints."""
    p = _check_table(p)
    if target_length < 2:
        raise ValueError(f"target_length must be >= 2, got {target_length}")
    L = p.shape[0]
    positions = []
    for i in range(target_length):
        # i * (L-1) / (n-1) in exact integer arithmetic keeps integer positions exact
        num = i * (L - 1)
        q, rem = divmod(num, target_length - 1)
        positions.append(float(q) if rem == 0 else num / (target_length - 1))
    return _blend_rows(p, positions)


def random_tail_extend(p, target_length: int, seed=0, scale=DEFAULT_INIT_SCALE) -> np.ndarray:
    """Copy ``p`` and append rows drawn from N(0, scale**2), seeded."""
    p = _check_table(p)
    L = p.shape[0]
    if target_length < L:
        raise ValueError(f"target_length {target_length} is shorter than the source ({L})")
    if scale < 0:
        raise ValueError(f"scale must be non-negative, got {scale}")
    rng = np.random.default_rng(seed)
    tail = rng.standard_normal((target_length - L, p.shape[1])) * scale
    return np.concatenate([p, tail.astype(p.dtype)], axis=0)


class PositionalEmbeddingExtender(TransformerMixin, BaseEstimator):
    """Extend a positional-embedding table to ``target_length`` rows.

    Parameters
    ----------
    target_length : int
    method : {"asymmetric", "uniform", "random"}
    boundary, r_head, r_tail, continuity
        Rate schedule for ``method="asymmetric"``.
    seed, scale
        Tail initialization for ``method="random"``.
    """

    def __init__(self, target_length=None, method="asymmetric", boundary=DEFAULT_BOUNDARY,
                 r_head=DEFAULT_R_HEAD, r_tail=DEFAULT_R_TAIL, continuity=CONTINUOUS,
                 seed=0, scale=DEFAULT_INIT_SCALE):
        self.target_length = target_length
        self.method = method
        self.boundary = boundary
        self.r_head = r_head
        self.r_tail = r_tail
        self.continuity = continuity
        self.seed = seed
        self.scale = scale

    def fit(self, X, y=None):
        p = _check_table(X)
        if self.method not in ("asymmetric", "uniform", "random"):
            raise ValueError(f"unknown method {self.method!r}")
        target = p.shape[0] if self.target_length is None else int(self.target_length)
        self.source_length_ = p.shape[0]
        self.target_length_ = target
        self.schedule_ = None
        if self.method == "asymmetric":
            self.schedule_ = RateSchedule(target, self.boundary, self.r_head, self.r_tail,
                                          self.continuity)
            for i in range(target):
                map_index(i, self.schedule_, source_length=p.shape[0])
        return self

    def transform(self, X):
        check_is_fitted(self, "source_length_")
        p = _check_table(X)
        if p.shape[0] != self.source_length_:
            raise ValueError(f"fitted on {self.source_length_} rows, got {p.shape[0]}")
        if self.method == "asymmetric":
            return interpolate_pe(p, self.schedule_)
        if self.method == "uniform":
            return uniform_interpolate_pe(p, self.target_length_)
        return random_tail_extend(p, self.target_length_, self.seed, self.scale)
