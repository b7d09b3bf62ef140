"""Visual flow: tuple-based cross-attention prototypes and distance logits.

Each video becomes a set of ordered frame tuples. A query tuple attends
over every support tuple of a candidate class (scaled dot-product,
softmax over the class's K * n_tuples support tuples); the attention
output is that query's prototype for the class at that tuple position.
Stacking over queries, classes, and tuples gives the prototype tensor of
shape (NM, N, n_tuples, d_p). Class logits are negated mean squared
distances between prototypes and value-mapped query tuples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import tensor as T
from .episodes import Episode
from .errors import CapacityError, ConfigurationError, DimensionError
from .store import EmbeddingStore
from .tensor import Tensor


def enumerate_tuples(n_frames: int, omega: int) -> tuple[tuple[int, ...], ...]:
    """All strictly increasing omega-subsequences of range(n_frames).

    Lexicographic order, 0-based frame indices; count is C(n_frames, omega).
    """
    if omega < 1:
        raise ConfigurationError(f"tuple size must be >= 1, got {omega}")
    if omega > n_frames:
        raise ConfigurationError(
            f"tuple size {omega} exceeds frame count {n_frames}")
    return tuple(combinations(range(n_frames), omega))


def tuple_rep_array(frames: np.ndarray,
                    tuples: tuple[tuple[int, ...], ...]) -> np.ndarray:
    """Numpy form of tuple_representations for constant frame arrays."""
    n_frames = frames.shape[0]
    for tup in tuples:
        if any(not (0 <= i < n_frames) for i in tup):
            raise DimensionError(
                f"tuple {tup} out of range for {n_frames} frames")
    picked = frames[np.array(tuples, dtype=np.intp)]  # (C, omega, d)
    return np.ascontiguousarray(picked.reshape(len(tuples), -1))


def tuple_representations(frames: Tensor,
                          tuples: tuple[tuple[int, ...], ...]) -> Tensor:
    """Rows of concatenated frame embeddings, one row per tuple.

    frames: (L, d) -> (n_tuples, omega*d). Constant inputs take a pure
    numpy fast path; differentiable inputs stay on the graph.
    """
    if not frames.requires_grad:
        return Tensor(tuple_rep_array(frames.data, tuples))
    n_frames = frames.shape[0]
    for tup in tuples:
        if any(not (0 <= i < n_frames) for i in tup):
            raise DimensionError(
                f"tuple {tup} out of range for {n_frames} frames")
    rows = []
    for tup in tuples:
        parts = [T.narrow(frames, 0, i, 1) for i in tup]
        rows.append(T.concat(parts, axis=1) if len(parts) > 1 else parts[0])
    return T.concat(rows, axis=0) if len(rows) > 1 else rows[0]


class RepCache:
    """Per-(omega, video) tuple-representation arrays, built lazily.

    Store embeddings are constants, so their tuple rows never change;
    caching them avoids rebuilding the same matrices every episode.
    """

    def __init__(self, store: EmbeddingStore,
                 tuples_by_omega: dict[int, tuple[tuple[int, ...], ...]]):
        self._store = store
        self._tuples = tuples_by_omega
        self._cache: dict[tuple[int, str], np.ndarray] = {}

    def video(self, omega: int, video_id: str) -> np.ndarray:
        key = (omega, video_id)
        hit = self._cache.get(key)
        if hit is None:
            hit = tuple_rep_array(self._store.visual[video_id],
                                  self._tuples[omega])
            self._cache[key] = hit
        return hit

    def stack(self, omega: int, video_ids) -> Tensor:
        arrays = [self.video(omega, vid) for vid in video_ids]
        return Tensor(arrays[0] if len(arrays) == 1
                      else np.concatenate(arrays, axis=0))


@dataclass
class TrxParams:
    """Trainable linear maps of the tuple cross-attention, one set per omega.

    query_map/key_map: (omega*d, d_k); value_map: (omega*d, d_p). The
    value map is shared between support tuples and query tuples.
    """
    query_map: Tensor
    key_map: Tensor
    value_map: Tensor

    @property
    def d_k(self) -> int:
        return self.query_map.shape[1]

    @property
    def d_p(self) -> int:
        return self.value_map.shape[1]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [("query_map", self.query_map), ("key_map", self.key_map),
                ("value_map", self.value_map)]


def init_trx(rng: np.random.Generator, omega: int, dim: int, d_k: int,
             d_p: int, dtype=T.DEFAULT_DTYPE) -> TrxParams:
    if d_k < 1 or d_p < 1:
        raise ConfigurationError(f"d_k and d_p must be positive, got {d_k}/{d_p}")
    fan_in = omega * dim
    return TrxParams(
        query_map=T.init_linear(rng, fan_in, d_k, dtype),
        key_map=T.init_linear(rng, fan_in, d_k, dtype),
        value_map=T.init_linear(rng, fan_in, d_p, dtype),
    )


def episode_query_reps(store: EmbeddingStore, episode: Episode,
                       tuples: tuple[tuple[int, ...], ...]) -> Tensor:
    """Tuple representations of all query videos, stacked slot-major.

    Returns (NM * n_tuples, omega*d); video m occupies rows
    [m*n_tuples, (m+1)*n_tuples).
    """
    arrays = [tuple_rep_array(store.visual[vid], tuples)
              for vid in episode.flat_query_ids()]
    return Tensor(np.concatenate(arrays, axis=0) if len(arrays) > 1
                  else arrays[0])


def episode_support_reps(store: EmbeddingStore, episode: Episode,
                         tuples: tuple[tuple[int, ...], ...]) -> list[Tensor]:
    """Per class slot, the (K * n_tuples, omega*d) stack of support tuples."""
    out = []
    for slot_videos in episode.support:
        arrays = [tuple_rep_array(store.visual[vid], tuples)
                  for vid in slot_videos]
        out.append(Tensor(np.concatenate(arrays, axis=0) if len(arrays) > 1
                          else arrays[0]))
    return out


def trx_prototypes(query_reps: Tensor, support_reps_by_class: list[Tensor],
                   params: TrxParams, n_tuples: int,
                   return_attention: bool = False):
    """Query-specific class prototypes via cross-attention over support tuples.

    query_reps: (NM * n_tuples, omega*d); support_reps_by_class[n]:
    (K_n * n_tuples, omega*d). Output: (NM, N, n_tuples, d_p). With
    return_attention, also returns the per-class attention weight
    matrices (each (NM * n_tuples, K_n * n_tuples), rows on the simplex).
    """
    total_rows, rep_width = query_reps.shape
    if total_rows % n_tuples != 0:
        raise DimensionError(
            f"{total_rows} query rows not divisible by n_tuples={n_tuples}")
    nm = total_rows // n_tuples
    if rep_width != params.query_map.shape[0]:
        raise DimensionError(
            f"representation width {rep_width} does not match maps "
            f"({params.query_map.shape[0]})")
    inv_scale = 1.0 / math.sqrt(params.d_k)

    q_att = T.matmul(query_reps, params.query_map)      # (NM*C, d_k)
    class_blocks = []
    attention = []
    for slot, support_reps in enumerate(support_reps_by_class):
        if support_reps.shape[0] == 0:
            raise CapacityError(f"class slot {slot} has no support tuples")
        keys = T.matmul(support_reps, params.key_map)    # (KC, d_k)
        values = T.matmul(support_reps, params.value_map)  # (KC, d_p)
        scores = T.scale(T.matmul(q_att, T.transpose(keys)), inv_scale)
        weights = T.softmax(scores, axis=1)              # (NM*C, KC)
        proto = T.matmul(weights, values)                # (NM*C, d_p)
        class_blocks.append(T.reshape(proto, (nm, 1, n_tuples, params.d_p)))
        if return_attention:
            attention.append(weights)
    prototypes = (T.concat(class_blocks, axis=1)
                  if len(class_blocks) > 1 else class_blocks[0])
    if return_attention:
        return prototypes, attention
    return prototypes


def query_values(query_reps: Tensor, params: TrxParams, n_tuples: int) -> Tensor:
    """Value-mapped query tuples, (NM, n_tuples, d_p); shares value_map
    with the support side."""
    mapped = T.matmul(query_reps, params.value_map)
    nm = query_reps.shape[0] // n_tuples
    return T.reshape(mapped, (nm, n_tuples, params.d_p))


def logits_from_prototypes(prototypes: Tensor, q_values: Tensor) -> Tensor:
    """logit(m, n) = -mean over tuples of ||prototype(m,n,t) - query(m,t)||^2.

    prototypes: (NM, N, C, d_p); q_values: (NM, C, d_p) -> (NM, N).
    A perfect match gives logit 0, the maximum possible.
    """
    if len(prototypes.shape) != 4 or len(q_values.shape) != 3:
        raise DimensionError(
            f"expected 4-d prototypes and 3-d query values, got "
            f"{prototypes.shape} and {q_values.shape}")
    nm, _, n_tuples, d_p = prototypes.shape
    if q_values.shape != (nm, n_tuples, d_p):
        raise DimensionError(
            f"query values {q_values.shape} do not match prototypes "
            f"{prototypes.shape}")
    diff = T.sub(prototypes, T.reshape(q_values, (nm, 1, n_tuples, d_p)))
    sq_dist = T.sum_(T.mul(diff, diff), axis=(2, 3))     # (NM, N)
    return T.scale(sq_dist, -1.0 / n_tuples)
