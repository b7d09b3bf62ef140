"""Episodic sampling: N-way K-shot tasks with M queries per class.

An episode fixes N class slots (a random subset of the split's classes),
K support and M query videos per slot (disjoint, sampled without
replacement), and a single text-template index shared by the whole
episode. Sampling is a pure function of (store, rng state): callers that
hand independent generators to independent workers get reproducible,
non-overlapping streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigurationError
from .store import EmbeddingStore
from .text import select_template


@dataclass(frozen=True)
class Episode:
    n_way: int
    k_shot: int
    m_queries: int
    class_indices: tuple[int, ...]          # dataset class index per slot
    support: tuple[tuple[str, ...], ...]    # per slot: K video ids
    query: tuple[tuple[str, ...], ...]      # per slot: M video ids
    template_index: int

    def __post_init__(self):
        if len(self.class_indices) != self.n_way:
            raise ConfigurationError(
                f"{len(self.class_indices)} class slots for n_way={self.n_way}")
        for slot, (sup, qry) in enumerate(zip(self.support, self.query)):
            if len(sup) != self.k_shot or len(qry) != self.m_queries:
                raise ConfigurationError(
                    f"slot {slot} has {len(sup)} support / {len(qry)} query "
                    f"videos, expected {self.k_shot}/{self.m_queries}")
            overlap = set(sup) & set(qry)
            if overlap:
                raise ConfigurationError(
                    f"slot {slot} reuses videos in support and query: {overlap}")

    @property
    def query_labels(self) -> np.ndarray:
        """Ground-truth slot per flattened query row (slot-major order)."""
        return np.repeat(np.arange(self.n_way), self.m_queries)

    def flat_query_ids(self) -> list[str]:
        return [vid for slot in self.query for vid in slot]


def sample_episode(store: EmbeddingStore, split: str, n_way: int, k_shot: int,
                   m_queries: int, rng: np.random.Generator) -> Episode:
    """Draw one episode from a split.

    Draw order (fixed, so a given rng state always yields the same
    episode): class slots first, then K+M videos per slot in slot order
    (first K are support), then the template index.
    """
    if n_way < 2:
        raise ConfigurationError(f"n_way must be >= 2, got {n_way}")
    if k_shot < 1 or m_queries < 1:
        raise ConfigurationError(
            f"k_shot and m_queries must be >= 1, got {k_shot}/{m_queries}")

    pool = store.split_class_indices(split)
    if len(pool) < n_way:
        raise CapacityError(
            f"split {split!r} has {len(pool)} classes, episode needs {n_way}")
    needed = k_shot + m_queries
    for ci in pool:
        have = len(store.split_videos_of_class(split, ci))
        if have < needed:
            raise CapacityError(
                f"class {store.manifest.classes[ci]!r} in split {split!r} has "
                f"{have} videos, episode needs {needed}")

    slot_order = rng.choice(len(pool), size=n_way, replace=False)
    class_indices = tuple(pool[i] for i in slot_order)

    support: list[tuple[str, ...]] = []
    query: list[tuple[str, ...]] = []
    for ci in class_indices:
        vids = store.split_videos_of_class(split, ci)
        picks = rng.choice(len(vids), size=needed, replace=False)
        support.append(tuple(vids[i] for i in picks[:k_shot]))
        query.append(tuple(vids[i] for i in picks[k_shot:]))

    template_index = select_template(rng, store.manifest.n_templates)
    return Episode(
        n_way=n_way,
        k_shot=k_shot,
        m_queries=m_queries,
        class_indices=class_indices,
        support=tuple(support),
        query=tuple(query),
        template_index=template_index,
    )
