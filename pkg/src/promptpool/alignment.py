"""Prompt relevance scores for visual patch tokens.

Each patch token is projected into the joint vision-text space, compared
with a text feature, and the temperature-scaled similarities are turned
into a single softmax over every (frame, row, column) position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._parallel import run_blocks
from ._validation import as_float_array, check_video

DEFAULT_TEMPERATURE = 100.0
_BLOCK_TOKENS = 4096


@dataclass(frozen=True)
class AlignmentConfig:
    temperature: float = DEFAULT_TEMPERATURE
    normalize: bool = True
    aggregation: str = "mean-scores"

    def __post_init__(self):
        if not np.isfinite(self.temperature) or self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.aggregation != "mean-scores":
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


def project_visual(v, m, n_jobs=1):
    """Map each token of a T x W x H x D grid through a D x D' projection."""
    v = as_float_array(v, "visual tokens", min_ndim=1)
    m = as_float_array(m, "projection", ndim=2)
    if min(m.shape) < 1:
        raise ValueError(f"projection must be non-empty, got shape {m.shape}")
    if v.shape[-1] != m.shape[0]:
        raise ValueError(
            f"token width {v.shape[-1]} does not match projection rows {m.shape[0]}"
        )
    tokens = v.reshape(-1, v.shape[-1])
    out = np.empty((tokens.shape[0], m.shape[1]), dtype=np.result_type(v, m))

    def work(start, stop):
        np.matmul(tokens[start:stop], m, out=out[start:stop])

    run_blocks(work, tokens.shape[0], _BLOCK_TOKENS, n_jobs)
    return out.reshape(v.shape[:-1] + (m.shape[1],))


def _unit(x, what):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError(f"zero-norm {what} cannot be normalized")
    return x / norm


def alignment_logits(projected, c, cfg=None, n_jobs=1):
    """Temperature-scaled similarity between every projected token and ``c``."""
    cfg = AlignmentConfig() if cfg is None else cfg
    projected = as_float_array(projected, "projected tokens", min_ndim=1)
    c = as_float_array(c, "text feature", ndim=1)
    if projected.shape[-1] != c.shape[0]:
        raise ValueError(
            f"projected width {projected.shape[-1]} does not match text width {c.shape[0]}"
        )
    tokens = projected.reshape(-1, c.shape[0])
    if cfg.normalize:
        c = _unit(c, "text feature")
    out = np.empty(tokens.shape[0], dtype=np.result_type(tokens, c))

    def work(start, stop):
        block = tokens[start:stop]
        if cfg.normalize:
            block = _unit(block, "visual token")
        out[start:stop] = cfg.temperature * (block @ c)

    run_blocks(work, tokens.shape[0], _BLOCK_TOKENS, n_jobs)
    return out.reshape(projected.shape[:-1])


def softmax_scores(logits):
    """Max-shifted softmax over every position of ``logits``, keeping its shape."""
    logits = as_float_array(logits, "logits")
    if logits.size == 0:
        raise ValueError("logits must not be empty")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def scores_multi_prompt(projected, prompts, cfg=None, n_jobs=1):
    """Average the per-prompt score tensors and renormalize to unit mass."""
    prompts = [as_float_array(p, "text feature", ndim=1) for p in _iter_prompts(prompts)]
    if not prompts:
        raise ValueError("at least one prompt is required")
    per_prompt = [softmax_scores(alignment_logits(projected, c, cfg, n_jobs=n_jobs)) for c in prompts]
    if len(per_prompt) == 1:
        return per_prompt[0]
    total = per_prompt[0]
    for s in per_prompt[1:]:
        total = total + s
    mean = total / len(per_prompt)
    return mean / mean.sum()


def _iter_prompts(prompts):
    if isinstance(prompts, np.ndarray):
        return [prompts] if prompts.ndim == 1 else list(prompts)
    return list(prompts)


def score_entropy(s):
    """Shannon entropy (nats) of a score tensor; zero entries contribute 0."""
    p = np.asarray(s, dtype=np.float64).reshape(-1)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


class PromptAligner(TransformerMixin, BaseEstimator):
    """Score video tokens by relevance to one or more text prompts.

    ``fit`` takes the prompt feature(s); ``transform`` takes a
    T x W x H x D video grid and returns the T x W x H score tensor.

    Parameters
    ----------
    projection : array of shape (D, D') or None
        Visual projection into the joint space. ``None`` means identity.
    temperature : float
        Logit scale applied to the similarities.
    normalize : bool
        L2-normalize tokens and prompts before the dot product.
    n_jobs : int
        Threads used for the projection and logits.
    """

    def __init__(self, projection=None, temperature=DEFAULT_TEMPERATURE, normalize=True, n_jobs=1):
        self.projection = projection
        self.temperature = temperature
        self.normalize = normalize
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        prompts = as_float_array(X, "text features", min_ndim=1)
        if prompts.ndim == 1:
            prompts = prompts[None, :]
        if prompts.ndim != 2 or prompts.shape[0] < 1:
            raise ValueError(f"text features must be (D',) or (K, D'), got {prompts.shape}")
        self.config_ = AlignmentConfig(float(self.temperature), bool(self.normalize))
        self.prompts_ = prompts
        self.n_prompts_ = prompts.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "prompts_")
        v = check_video(X)
        projected = v if self.projection is None else project_visual(v, self.projection, self.n_jobs)
        return scores_multi_prompt(projected, self.prompts_, self.config_, n_jobs=self.n_jobs)
