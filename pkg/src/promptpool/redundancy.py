"""Certificate length of a video-QA pair.

Frames (already embedded, typically sampled at 2 fps upstream) are compared
with the question-answer text embedding; a frame counts as relevant when its
cosine similarity strictly exceeds the threshold. The certificate is the
fraction of relevant frames, so a small value means a highly redundant video.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_float_array

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class RelevanceProfile:
    similarities: np.ndarray
    mask: np.ndarray
    certificate: float
    threshold: float

    @property
    def n_frames(self) -> int:
        return int(self.mask.shape[0])

    @property
    def n_relevant(self) -> int:
        return int(self.mask.sum())

    def to_record(self, video_id=None) -> dict:
        rec = {"certificate": self.certificate, "mask": [bool(m) for m in self.mask]}
        if video_id is not None:
            rec = {"id": video_id, **rec}
        return rec


def frame_similarities(frames, text) -> np.ndarray:
    """Cosine similarity of each of N frame embeddings with one text embedding."""
    frames = as_float_array(frames, "frame embeddings", ndim=2)
    text = as_float_array(text, "text embedding", ndim=1)
    if frames.shape[0] < 1:
        raise ValueError("need at least one frame")
    if frames.shape[1] != text.shape[0]:
        raise ValueError(
            f"frame width {frames.shape[1]} does not match text width {text.shape[0]}"
        )
    frame_norms = np.linalg.norm(frames, axis=1)
    text_norm = np.linalg.norm(text)
    if text_norm == 0:
        raise ValueError("zero-norm text embedding")
    zero = np.flatnonzero(frame_norms == 0)
    if zero.size:
        raise ValueError(f"zero-norm frame embedding at index {int(zero[0])}")
    sims = (frames / frame_norms[:, None]) @ (text / text_norm)
    return np.clip(sims, -1.0, 1.0)


def certificate(similarities, threshold=DEFAULT_THRESHOLD) -> RelevanceProfile:
    """Fraction of frames whose similarity is strictly above ``threshold``."""
    sims = as_float_array(similarities, "similarities", ndim=1)
    if sims.shape[0] < 1:
        raise ValueError("need at least one similarity")
    threshold = float(threshold)
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    mask = sims > threshold
    return RelevanceProfile(sims, mask, int(mask.sum()) / mask.shape[0], threshold)


def video_certificate(frames, text, threshold=DEFAULT_THRESHOLD) -> RelevanceProfile:
    return certificate(frame_similarities(frames, text), threshold)


def shortest_certificates(records, top_k):
    """The ``top_k`` records with the smallest certificate; ties keep input order."""
    ranked = sorted(
        (r for r in records if "certificate" in r), key=lambda r: r["certificate"]
    )
    return ranked if top_k is None else ranked[:top_k]
