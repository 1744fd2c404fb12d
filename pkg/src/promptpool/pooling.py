"""Prompt-guided 3D pooling of video patch tokens.

A T x W x H x D token grid is reduced window by window, like a strided 3D
convolution whose kernel weights are read from the score tensor at the
positions the window currently covers. Windows that do not fit entirely
inside the grid are dropped (floor semantics).

Every reduction visits window offsets in ascending flat order, so results
are bit-identical at any ``n_jobs``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._parallel import run_blocks
from ._validation import check_scores, check_triple, check_video
from .tensor import Shape3

WEIGHTED_SUM = "weighted-sum-literal"
WEIGHTED_AVERAGE = "weighted-average"
MAX = "max"
AVERAGE = "average-baseline"
MODES = (WEIGHTED_SUM, WEIGHTED_AVERAGE, MAX, AVERAGE)
DIFFERENTIABLE_MODES = (WEIGHTED_SUM, WEIGHTED_AVERAGE)

VIDEO_KERNEL = (2, 3, 3)
IMAGE_KERNEL = (1, 3, 3)

# output frames handled per work item; fixed so the split never depends on n_jobs
_BLOCK_FRAMES = 1


@dataclass(frozen=True)
class PoolingSpec:
    """Window extents, step sizes and reduction mode of one pooling branch."""

    kernel: Tuple[int, int, int] = VIDEO_KERNEL
    stride: Optional[Tuple[int, int, int]] = None
    mode: str = WEIGHTED_AVERAGE

    def __post_init__(self):
        kernel = check_triple(self.kernel, "kernel")
        stride = kernel if self.stride is None else check_triple(self.stride, "stride")
        if self.mode not in MODES:
            raise ValueError(f"unknown pooling mode {self.mode!r}; expected one of {MODES}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "stride", stride)

    @property
    def window_size(self) -> int:
        kt, kw, kh = self.kernel
        return kt * kw * kh

    @classmethod
    def from_dict(cls, d: dict) -> "PoolingSpec":
        unknown = set(d) - {"kernel", "stride", "mode"}
        if unknown:
            raise ValueError(f"unknown pooling spec keys: {sorted(unknown)}")
        return cls(
            kernel=tuple(d.get("kernel", VIDEO_KERNEL)),
            stride=None if d.get("stride") is None else tuple(d["stride"]),
            mode=d.get("mode", WEIGHTED_AVERAGE),
        )

    def to_dict(self) -> dict:
        return {"kernel": list(self.kernel), "stride": list(self.stride), "mode": self.mode}

    def with_mode(self, mode: str) -> "PoolingSpec":
        return PoolingSpec(self.kernel, self.stride, mode)


def output_shape(in_shape, spec: PoolingSpec) -> Shape3:
    """Pooled grid extents: ``(X - k) // d + 1`` on every axis."""
    in_shape = Shape3.of(in_shape)
    extents = []
    for axis, x, k, d in zip("twh", in_shape.as_tuple(), spec.kernel, spec.stride):
        if k > x:
            raise ValueError(f"kernel {k} exceeds input extent {x} on axis {axis}")
        extents.append((x - k) // d + 1)
    return Shape3(*extents)


def compression_ratio(in_shape, out_shape) -> float:
    """Input token count over output token count."""
    return Shape3.of(in_shape).size / Shape3.of(out_shape).size


def _window_offsets(spec):
    kt, kw, kh = spec.kernel
    return itertools.product(range(kt), range(kw), range(kh))


def _window_slices(offset, spec, out, t0, t1):
    """Slices picking, for every output cell in frames [t0, t1), the input at ``offset``."""
    (i, j, k), (dt, dw, dh) = offset, spec.stride
    return (
        slice(i + t0 * dt, i + (t1 - 1) * dt + 1, dt),
        slice(j, j + (out.w - 1) * dw + 1, dw),
        slice(k, k + (out.h - 1) * dh + 1, dh),
    )


def _prepare(v, s, spec, needs_scores=True):
    v = check_video(v)
    grid = v.shape[:3]
    if s is None:
        if needs_scores and spec.mode != AVERAGE:
            raise ValueError(f"mode {spec.mode!r} requires a score tensor")
    else:
        s = check_scores(s, grid)
    return v, s, output_shape(grid, spec)


def pool_forward(v, s, spec: PoolingSpec, n_jobs=1) -> np.ndarray:
    """Pool a T x W x H x D grid into T' x W' x H' x D.

    Modes:
      * ``weighted-sum-literal``: sum of tokens times their scores.
      * ``weighted-average``: the same sum divided by the window's score mass.
      * ``max``: the window token with the highest score (first one on ties).
      * ``average-baseline``: unweighted window mean; ``s`` is ignored.
    """
    v, s, out = _prepare(v, s, spec)
    dtype = v.dtype if spec.mode == AVERAGE else np.result_type(v, s)
    result = np.empty(out.as_tuple() + (v.shape[3],), dtype=dtype)
    offsets = list(_window_offsets(spec))

    def work(t0, t1):
        cells = (t1 - t0, out.w, out.h)
        if spec.mode == MAX:
            best_s = np.full(cells, -np.inf, dtype=dtype)
            best_v = np.zeros(cells + (v.shape[3],), dtype=dtype)
            for off in offsets:
                sl = _window_slices(off, spec, out, t0, t1)
                better = s[sl] > best_s
                best_s = np.where(better, s[sl], best_s)
                best_v = np.where(better[..., None], v[sl], best_v)
            result[t0:t1] = best_v
            return
        acc = np.zeros(cells + (v.shape[3],), dtype=dtype)
        mass = np.zeros(cells, dtype=dtype)
        for off in offsets:
            sl = _window_slices(off, spec, out, t0, t1)
            if spec.mode == AVERAGE:
                acc += v[sl]
            else:
                acc += v[sl] * s[sl][..., None]
                mass += s[sl]
        if spec.mode == AVERAGE:
            acc /= len(offsets)
        elif spec.mode == WEIGHTED_AVERAGE:
            if np.any(mass == 0):
                raise ValueError("window with zero score mass in weighted-average mode")
            acc /= mass[..., None]
        result[t0:t1] = acc

    run_blocks(work, out.t, _BLOCK_FRAMES, n_jobs)
    return result


def pool_backward(v, s, spec: PoolingSpec, grad_out, n_jobs=1):
    """Adjoint of :func:`pool_forward` in the two weighted modes.

    Returns ``(grad_v, grad_s)`` with the shapes of ``v`` and ``s``. For
    weighted-average the gradient flows through the per-window normalizer.
    Positions outside every window get zero.
    """
    if spec.mode not in DIFFERENTIABLE_MODES:
        raise ValueError(f"no gradient for pooling mode {spec.mode!r}")
    v, s, out = _prepare(v, s, spec)
    g = np.asarray(grad_out)
    expected = out.as_tuple() + (v.shape[3],)
    if g.shape != expected:
        raise ValueError(f"grad_out shape {g.shape} does not match pooled shape {expected}")
    dtype = np.result_type(v, s, g)
    offsets = list(_window_offsets(spec))
    kt, dt = spec.kernel[0], spec.stride[0]
    n_blocks = -(-out.t // _BLOCK_FRAMES)
    partials = [None] * n_blocks

    def work(t0, t1):
        # local buffers cover only this block's input frames; merged in block order below
        lo, hi = t0 * dt, (t1 - 1) * dt + kt
        gv = np.zeros((hi - lo,) + v.shape[1:], dtype=dtype)
        gs = np.zeros((hi - lo,) + s.shape[1:], dtype=dtype)
        g_blk = g[t0:t1]
        if spec.mode == WEIGHTED_AVERAGE:
            num = np.zeros(g_blk.shape, dtype=dtype)
            mass = np.zeros(g_blk.shape[:3], dtype=dtype)
            for off in offsets:
                sl = _window_slices(off, spec, out, t0, t1)
                num += v[sl] * s[sl][..., None]
                mass += s[sl]
            if np.any(mass == 0):
                raise ValueError("window with zero score mass in weighted-average mode")
            pooled = num / mass[..., None]
            g_blk = g_blk / mass[..., None]
            g_dot_pooled = np.sum(g_blk * pooled, axis=-1)
        for off in offsets:
            sl = _window_slices(off, spec, out, t0, t1)
            local = (slice(sl[0].start - lo, sl[0].stop - lo, dt),) + sl[1:]
            gv[local] += s[sl][..., None] * g_blk
            gs[local] += np.sum(v[sl] * g_blk, axis=-1)
            if spec.mode == WEIGHTED_AVERAGE:
                gs[local] -= g_dot_pooled
        partials[t0 // _BLOCK_FRAMES] = (lo, hi, gv, gs)

    run_blocks(work, out.t, _BLOCK_FRAMES, n_jobs)
    grad_v = np.zeros(v.shape, dtype=dtype)
    grad_s = np.zeros(s.shape, dtype=dtype)
    for lo, hi, gv, gs in partials:
        grad_v[lo:hi] += gv
        grad_s[lo:hi] += gs
    return grad_v, grad_s


def average_pool(v, spec: PoolingSpec, n_jobs=1) -> np.ndarray:
    """Unweighted window mean; the baseline prompt-guided pooling is compared to."""
    return pool_forward(v, None, spec.with_mode(AVERAGE), n_jobs=n_jobs)


def _tokens(pooled):
    return pooled.reshape(-1, pooled.shape[-1])


def pool_multi(v, s, specs: Sequence[PoolingSpec], n_jobs=1) -> np.ndarray:
    """Pool with several branches sharing one score tensor; concatenate their tokens."""
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError(f"multi-branch pooling needs at least two specs, got {len(specs)}")
    return np.concatenate([_tokens(pool_forward(v, s, spec, n_jobs)) for spec in specs], axis=0)


def pool_separate_st(v, s, spec_t: PoolingSpec, spec_s: PoolingSpec, n_jobs=1) -> np.ndarray:
    """Pool time and space in two independent branches, then concatenate.

    The temporal branch first collapses each frame to one token (score
    weighted mean over the patch grid) and pools those frame tokens with the
    per-frame score mass. The spatial branch does the same across frames and
    pools the resulting W x H map. Output has T' + W' * H' tokens.
    """
    if spec_t.kernel[1:] != (1, 1) or spec_t.stride[1:] != (1, 1):
        raise ValueError("temporal spec must have unit spatial kernel and stride")
    if spec_s.kernel[0] != 1 or spec_s.stride[0] != 1:
        raise ValueError("spatial spec must have unit temporal kernel and stride")
    v, s, _ = _prepare(v, s, PoolingSpec((1, 1, 1), mode=spec_t.mode))
    if s is None and spec_s.mode != AVERAGE:
        raise ValueError(f"mode {spec_s.mode!r} requires a score tensor")
    T, W, H, _ = v.shape

    def collapse(kernel, axes, branch_mode):
        if s is None or branch_mode == AVERAGE:
            return pool_forward(v, None, PoolingSpec(kernel, mode=AVERAGE), n_jobs), None
        tokens = pool_forward(v, s, PoolingSpec(kernel, mode=WEIGHTED_AVERAGE), n_jobs)
        return tokens, s.sum(axis=axes, keepdims=True)

    v_t, s_t = collapse((1, W, H), (1, 2), spec_t.mode)
    v_s, s_s = collapse((T, 1, 1), (0,), spec_s.mode)
    temporal = pool_forward(v_t, s_t, spec_t, n_jobs)
    spatial = pool_forward(v_s, s_s, spec_s, n_jobs)
    return np.concatenate([_tokens(temporal), _tokens(spatial)], axis=0)


class PromptGuidedPooler(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`pool_forward`.

    ``fit`` checks the spec against the grid and records shape bookkeeping;
    ``transform(X, scores)`` returns the pooled T' x W' x H' x D grid.

    Parameters
    ----------
    kernel : tuple of 3 ints
    stride : tuple of 3 ints or None
        Defaults to ``kernel``.
    mode : str
        One of ``weighted-average``, ``weighted-sum-literal``, ``max`` or
        ``average-baseline``.
    n_jobs : int
    """

    def __init__(self, kernel=VIDEO_KERNEL, stride=None, mode=WEIGHTED_AVERAGE, n_jobs=1):
        self.kernel = kernel
        self.stride = stride
        self.mode = mode
        self.n_jobs = n_jobs

    def fit(self, X, y=None, scores=None):
        spec = PoolingSpec(self.kernel, self.stride, self.mode)
        v, _, out = _prepare(X, scores, spec, needs_scores=False)
        self.spec_ = spec
        self.input_shape_ = Shape3.of(v.shape[:3])
        self.output_shape_ = out
        self.n_tokens_in_ = self.input_shape_.size
        self.n_tokens_out_ = out.size
        self.compression_ratio_ = compression_ratio(self.input_shape_, out)
        return self

    def transform(self, X, scores=None):
        check_is_fitted(self, "spec_")
        return pool_forward(X, scores, self.spec_, n_jobs=self.n_jobs)

    def fit_transform(self, X, y=None, scores=None):
        return self.fit(X, y, scores=scores).transform(X, scores=scores)
