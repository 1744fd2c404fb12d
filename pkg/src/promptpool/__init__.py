"""Prompt-guided visual token compression kernels."""

from .alignment import (
    AlignmentConfig,
    PromptAligner,
    alignment_logits,
    project_visual,
    scores_multi_prompt,
    softmax_scores,
)
from .context import (
    PositionalEmbeddingExtender,
    RateSchedule,
    interpolate_pe,
    map_index,
    max_target_length,
    random_tail_extend,
    uniform_interpolate_pe,
)
from .pooling import (
    PoolingSpec,
    PromptGuidedPooler,
    average_pool,
    compression_ratio,
    output_shape,
    pool_backward,
    pool_forward,
    pool_multi,
    pool_separate_st,
)
from .redundancy import RelevanceProfile, certificate, frame_similarities
from .tensor import Shape3, Tensor, TensorFormatError, read_tensor, write_tensor

__version__ = "0.1.0"
