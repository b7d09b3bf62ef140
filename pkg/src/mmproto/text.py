"""Text flow: per-episode template choice, semantic enhancement of cached
class-text embeddings, and inflation to prototype shape.

The text encoder itself is frozen and lives outside this package; the
store caches one d-vector per (template, class). The only trainable
piece here is the enhancement module: multi-head self-attention over the
episode's N class-text vectors (4 heads by default), mapping d -> d_p.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import MhaParams, Tensor

SE_DEFAULT_HEADS = 4


def select_template(rng: np.random.Generator, n_templates: int) -> int:
    """Uniform template index in [0, n_templates); one draw per episode."""
    if n_templates < 1:
        raise ConfigurationError(
            f"need at least one template, got {n_templates}")
    return int(rng.integers(0, n_templates))


def init_se(rng: np.random.Generator, dim: int, d_p: int,
            heads: int = SE_DEFAULT_HEADS, dtype=T.DEFAULT_DTYPE) -> MhaParams:
    """Enhancement attention weights: d -> d_p with `heads` heads.

    The attention model width equals d_p, so heads must divide d_p.
    """
    if d_p % heads != 0:
        raise ConfigurationError(
            f"se heads={heads} must divide output width d_p={d_p}")
    return T.init_mha(rng, d_in=dim, d_model=d_p, d_out=d_p, heads=heads,
                      dtype=dtype)


def se_module(class_texts: Tensor, params: MhaParams) -> Tensor:
    """Self-attention over the episode's class-text vectors.

    class_texts: (N, d), all rows from the same template. Queries, keys
    and values are all the same N-row sequence; output row i is the
    enhanced embedding of class slot i, shape (N, d_p). Permuting input
    rows permutes output rows identically.
    """
    if len(class_texts.shape) != 2 or class_texts.shape[0] < 1:
        raise ConfigurationError(
            f"class texts must be a non-empty (N, d) batch, got "
            f"{class_texts.shape}")
    if class_texts.shape[1] != params.w_q.shape[0]:
        raise ConfigurationError(
            f"text width {class_texts.shape[1]} does not match enhancement "
            f"weights (expect {params.w_q.shape[0]})")
    return T.multi_head_attention(class_texts, class_texts, class_texts, params)


def episode_class_texts(text_cache: np.ndarray, template_index: int,
                        class_indices: tuple[int, ...]) -> Tensor:
    """Slice the (n_templates, n_classes, d) cache down to the episode's
    (N, d) batch, one row per class slot, single template."""
    n_templates = text_cache.shape[0]
    if not (0 <= template_index < n_templates):
        raise ConfigurationError(
            f"template_index {template_index} out of range "
            f"[0, {n_templates})")
    rows = text_cache[template_index, list(class_indices)]  # (N, d)
    return Tensor(rows.copy())


def inflate(text_prototypes: Tensor, n_way: int, m_queries: int,
            n_tuples: int) -> Tensor:
    """Broadcast per-class vectors to full prototype shape.

    text_prototypes: (N, d_p) -> (NM, N, n_tuples, d_p) with
    out[m, n, t] == text_prototypes[n] for every query m and tuple t, so
    the result has exactly zero variance along the query and tuple axes.
    """
    if len(text_prototypes.shape) != 2 or text_prototypes.shape[0] != n_way:
        raise ConfigurationError(
            f"expected ({n_way}, d_p) text prototypes, got "
            f"{text_prototypes.shape}")
    d_p = text_prototypes.shape[1]
    nm = n_way * m_queries
    as_axes = T.reshape(text_prototypes, (1, n_way, 1, d_p))
    return T.broadcast_to(as_axes, (nm, n_way, n_tuples, d_p))
