"""Multimodal prototype fusion: combine visual and text prototype tensors.

Four modes behind one interface:

* ``weighted_average`` — elementwise convex combination with weight
  ``lam`` on the text side (the default, lam=0.5). lam=0 returns the
  visual tensor unchanged, lam=1 the text tensor.
* ``attention`` — per prototype position, a 2-token sequence
  [visual, text] runs through multi-head self-attention; the output at
  the visual position plus a visual residual is the fused prototype.
  The output projection starts at zero, so training begins at identity.
* ``concat_mlp`` / ``mlp_concat`` — ablation variants: feature-axis
  concatenation and a two-layer map back to d_p, in either order
  (hidden width fixed at 2*d_p).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import MhaParams, Tensor

MPE_MODES = ("weighted_average", "attention", "concat_mlp", "mlp_concat")
MPE_DEFAULT_HEADS = 8
MPE_DEFAULT_LAM = 0.5


@dataclass
class MpeConfig:
    mode: str = "weighted_average"
    lam: float = MPE_DEFAULT_LAM
    heads: int = MPE_DEFAULT_HEADS

    def __post_init__(self):
        if self.mode not in MPE_MODES:
            raise ConfigurationError(
                f"unknown fusion mode {self.mode!r}; expected one of {MPE_MODES}")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigurationError(f"lam must be in [0, 1], got {self.lam}")
        if self.heads < 1:
            raise ConfigurationError(f"heads must be >= 1, got {self.heads}")


@dataclass
class MpeParams:
    """Trainable weights for the non-trivial fusion modes (None entries
    belong to other modes)."""
    attention: Optional[MhaParams] = None
    mlp_w1: Optional[Tensor] = None       # concat_mlp first layer (2*d_p, 2*d_p)
    mlp_w2: Optional[Tensor] = None       # second layer (2*d_p, d_p), both orders
    branch_visual: Optional[Tensor] = None  # mlp_concat per-modality (d_p, d_p)
    branch_text: Optional[Tensor] = None

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        named: list[tuple[str, Tensor]] = []
        if self.attention is not None:
            named.extend((f"attention.{k}", v)
                         for k, v in self.attention.named_tensors())
        for key in ("mlp_w1", "mlp_w2", "branch_visual", "branch_text"):
            val = getattr(self, key)
            if val is not None:
                named.append((key, val))
        return named


def init_mpe(rng: np.random.Generator, config: MpeConfig, d_p: int,
             dtype=T.DEFAULT_DTYPE) -> MpeParams:
    """Initialize fusion weights for the configured mode.

    Always consumes the same rng draws regardless of mode, so switching
    modes never shifts the seeding of later parameter groups.
    """
    if d_p % config.heads != 0:
        if config.mode == "attention":
            raise ConfigurationError(
                f"fusion heads={config.heads} must divide d_p={d_p}")
        heads = 1  # placeholder width for unused weights
    else:
        heads = config.heads
    attention = T.init_mha(rng, d_in=d_p, d_model=d_p, d_out=d_p, heads=heads,
                           dtype=dtype, zero_output=True)
    mlp_w1 = T.init_linear(rng, 2 * d_p, 2 * d_p, dtype)
    mlp_w2 = T.init_linear(rng, 2 * d_p, d_p, dtype)
    branch_visual = T.init_linear(rng, d_p, d_p, dtype)
    branch_text = T.init_linear(rng, d_p, d_p, dtype)
    if config.mode == "weighted_average":
        return MpeParams()
    if config.mode == "attention":
        return MpeParams(attention=attention)
    if config.mode == "concat_mlp":
        return MpeParams(mlp_w1=mlp_w1, mlp_w2=mlp_w2)
    return MpeParams(mlp_w2=mlp_w2, branch_visual=branch_visual,
                     branch_text=branch_text)


def _check_same_shape(p_visual: Tensor, p_text: Tensor, who: str,
                      error=DimensionError) -> None:
    if p_visual.shape != p_text.shape:
        raise error(
            f"{who}: prototype shapes differ, {p_visual.shape} vs {p_text.shape}")
    if len(p_visual.shape) != 4:
        raise error(
            f"{who}: expected (NM, N, n_tuples, d_p) tensors, got "
            f"{p_visual.shape}")


def mpe_weighted(p_visual: Tensor, p_text: Tensor, lam: float) -> Tensor:
    """(1 - lam) * visual + lam * text, elementwise.

    The endpoints short-circuit: lam=0 returns the visual tensor object
    itself (bit-identical downstream), lam=1 the text tensor.
    """
    _check_same_shape(p_visual, p_text, "mpe_weighted")
    if not (0.0 <= lam <= 1.0):
        raise ConfigurationError(f"lam must be in [0, 1], got {lam}")
    if lam == 0.0:
        return p_visual
    if lam == 1.0:
        return p_text
    return T.add(T.scale(p_visual, 1.0 - lam), T.scale(p_text, lam))


def mpe_attention(p_visual: Tensor, p_text: Tensor, params: MhaParams) -> Tensor:
    """Two-token self-attention fusion with a visual residual.

    Per prototype position the sequence is [visual, text]; keys and
    values span both tokens, the attention query is the visual token,
    and the fused value is attention output + visual input. All
    positions share one weight set, vectorized as one batch of rows.
    """
    _check_same_shape(p_visual, p_text, "mpe_attention", error=ConfigurationError)
    nm, n_way, n_tuples, d_p = p_visual.shape
    if d_p != params.w_q.shape[0]:
        raise ConfigurationError(
            f"fusion weights expect width {params.w_q.shape[0]}, "
            f"prototypes have d_p={d_p}")
    heads = params.heads
    d_model = params.d_model
    d_head = d_model // heads
    inv_scale = 1.0 / math.sqrt(d_head)
    rows = nm * n_way * n_tuples

    flat_v = T.reshape(p_visual, (rows, d_p))
    flat_t = T.reshape(p_text, (rows, d_p))
    q_vis = T.matmul(flat_v, params.w_q)
    k_vis = T.matmul(flat_v, params.w_k)
    k_txt = T.matmul(flat_t, params.w_k)
    v_vis = T.matmul(flat_v, params.w_v)
    v_txt = T.matmul(flat_t, params.w_v)

    head_outputs = []
    for h in range(heads):
        lo = h * d_head
        qh = T.narrow(q_vis, 1, lo, d_head)
        s_vis = T.sum_(T.mul(qh, T.narrow(k_vis, 1, lo, d_head)),
                       axis=1, keepdims=True)
        s_txt = T.sum_(T.mul(qh, T.narrow(k_txt, 1, lo, d_head)),
                       axis=1, keepdims=True)
        weights = T.softmax(T.scale(T.concat([s_vis, s_txt], axis=1), inv_scale),
                            axis=1)                       # (rows, 2)
        w_vis = T.narrow(weights, 1, 0, 1)
        w_txt = T.narrow(weights, 1, 1, 1)
        head_outputs.append(T.add(T.mul(w_vis, T.narrow(v_vis, 1, lo, d_head)),
                                  T.mul(w_txt, T.narrow(v_txt, 1, lo, d_head))))
    merged = T.concat(head_outputs, axis=1) if heads > 1 else head_outputs[0]
    fused = T.add(T.matmul(merged, params.w_o), flat_v)
    return T.reshape(fused, (nm, n_way, n_tuples, d_p))


def mpe_concat_mlp(p_visual: Tensor, p_text: Tensor, w1: Tensor,
                   w2: Tensor) -> Tensor:
    """Concatenate along the feature axis, then a two-layer map to d_p."""
    _check_same_shape(p_visual, p_text, "mpe_concat_mlp",
                      error=ConfigurationError)
    nm, n_way, n_tuples, d_p = p_visual.shape
    rows = nm * n_way * n_tuples
    joined = T.concat([T.reshape(p_visual, (rows, d_p)),
                       T.reshape(p_text, (rows, d_p))], axis=1)
    hidden = T.relu(T.matmul(joined, w1))
    return T.reshape(T.matmul(hidden, w2), (nm, n_way, n_tuples, d_p))


def mpe_mlp_concat(p_visual: Tensor, p_text: Tensor, w_visual: Tensor,
                   w_text: Tensor, w2: Tensor) -> Tensor:
    """Per-modality hidden layers first, then concatenate and map to d_p."""
    _check_same_shape(p_visual, p_text, "mpe_mlp_concat",
                      error=ConfigurationError)
    nm, n_way, n_tuples, d_p = p_visual.shape
    rows = nm * n_way * n_tuples
    hidden_v = T.relu(T.matmul(T.reshape(p_visual, (rows, d_p)), w_visual))
    hidden_t = T.relu(T.matmul(T.reshape(p_text, (rows, d_p)), w_text))
    joined = T.concat([hidden_v, hidden_t], axis=1)
    return T.reshape(T.matmul(joined, w2), (nm, n_way, n_tuples, d_p))


def fuse(p_visual: Tensor, p_text: Tensor, config: MpeConfig,
         params: MpeParams) -> Tensor:
    """Dispatch to the configured fusion mode."""
    if config.mode == "weighted_average":
        return mpe_weighted(p_visual, p_text, config.lam)
    if config.mode == "attention":
        return mpe_attention(p_visual, p_text, params.attention)
    if config.mode == "concat_mlp":
        return mpe_concat_mlp(p_visual, p_text, params.mlp_w1, params.mlp_w2)
    return mpe_mlp_concat(p_visual, p_text, params.branch_visual,
                          params.branch_text, params.mlp_w2)
