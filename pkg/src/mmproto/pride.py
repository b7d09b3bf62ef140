"""Prototype-quality metric and its losses.

The metric asks: how much closer (in cosine) is a video's prototype to
its own class's reference prototype than to the other classes'? The
reference ("real") prototype of a class is the average, over every video
of the class, of the prototype that video gets when it plays the query
in a 1-way episode against K same-class supports. Scores live in
[-2, 2]: difference between one cosine and the mean of the rest.

Two training-time pieces extend the metric into the objective: an
InfoNCE-style loss that pulls a query's prototype toward its class's
reference vector inside a softmax over all reference vectors, and a
learnable sigmoid gate mixing that loss with cross-entropy. During
training the reference bank cannot touch held-out classes, so an
exponential-moving-average bank over the training classes stands in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import tensor as T
from .errors import (
    CapacityError,
    ConfigurationError,
    UndefinedSimilarityError,
)
from .store import EmbeddingStore
from .text import select_template
from .tensor import Tensor

PRIDE_DEFAULT_TAU = 0.1
EMA_DEFAULT_DECAY = 0.99
# sigmoid(MIX_INIT) = 0.9: start CE-dominant
MIX_INIT = float(np.log(9.0))


class PrototypeModel(Protocol):
    """What the bank builder needs from a model: the tuple-averaged fused
    prototype a single video gets as the query of a 1-way episode."""

    def single_video_prototype(self, query_video: str, support_videos:
                               tuple[str, ...], class_index: int,
                               template_index: int) -> np.ndarray: ...


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two numpy vectors, clamped into [-1, 1].

    Zero-norm inputs raise rather than silently scoring 0.
    """
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity of a zero-norm vector")
    return float(np.clip(float(np.dot(a, b)) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class RealPrototypeBank:
    """One reference vector per evaluation class, in ascending class order."""
    class_indices: tuple[int, ...]       # dataset class indices
    vectors: np.ndarray                  # (n_classes, d_p) float

    def __post_init__(self):
        if len(self.class_indices) != self.vectors.shape[0]:
            raise ConfigurationError(
                f"{len(self.class_indices)} classes vs "
                f"{self.vectors.shape[0]} vectors")
        if not np.isfinite(self.vectors).all():
            raise ConfigurationError("bank contains non-finite vectors")

    @property
    def size(self) -> int:
        return len(self.class_indices)

    def position(self, class_index: int) -> int:
        try:
            return self.class_indices.index(class_index)
        except ValueError:
            raise ConfigurationError(
                f"class index {class_index} not in bank "
                f"{self.class_indices}") from None


def real_prototype_pass(store: EmbeddingStore, split: str,
                        model: PrototypeModel, k_shot: int,
                        rng: np.random.Generator
                        ) -> tuple[RealPrototypeBank, dict[str, np.ndarray],
                                   dict[str, int]]:
    """Run every video of the split through its own 1-way episode.

    Returns (bank, per-video prototype vectors, per-video class index).
    Iteration order is fixed — classes ascending, videos in manifest
    order, supports then template drawn per video — so a given rng state
    always produces the same bank.
    """
    class_indices = store.split_class_indices(split)
    if not class_indices:
        raise CapacityError(f"split {split!r} has no classes")
    n_templates = store.manifest.n_templates
    per_video: dict[str, np.ndarray] = {}
    labels: dict[str, int] = {}
    class_vectors = []
    for ci in class_indices:
        vids = store.split_videos_of_class(split, ci)
        if len(vids) < k_shot + 1:
            raise CapacityError(
                f"class {store.manifest.classes[ci]!r} has {len(vids)} videos; "
                f"reference prototypes need k_shot+1 = {k_shot + 1}")
        members = []
        for vid in vids:
            candidates = [v for v in vids if v != vid]
            picks = rng.choice(len(candidates), size=k_shot, replace=False)
            support = tuple(candidates[i] for i in picks)
            template_index = select_template(rng, n_templates)
            vec = model.single_video_prototype(vid, support, ci, template_index)
            per_video[vid] = vec
            labels[vid] = ci
            members.append(vec)
        class_vectors.append(np.mean(members, axis=0))
    bank = RealPrototypeBank(class_indices=tuple(class_indices),
                             vectors=np.stack(class_vectors))
    return bank, per_video, labels


def build_real_prototypes(store: EmbeddingStore, split: str,
                          model: PrototypeModel, k_shot: int,
                          rng: np.random.Generator) -> RealPrototypeBank:
    """Reference prototype per class of the split (see real_prototype_pass)."""
    bank, _, _ = real_prototype_pass(store, split, model, k_shot, rng)
    return bank


def pride_score(prototype: np.ndarray, class_index: int,
                bank: RealPrototypeBank) -> float:
    """Own-class cosine minus the mean cosine to every other class.

    Positive means the prototype sits closer to its own class's
    reference than to the field; range [-2, 2].
    """
    if bank.size < 2:
        raise ConfigurationError(
            f"the score needs >= 2 reference classes, bank has {bank.size}")
    pos = bank.position(class_index)
    sims = [cosine(prototype, bank.vectors[j]) for j in range(bank.size)]
    own = sims[pos]
    others = [s for j, s in enumerate(sims) if j != pos]
    return own - sum(others) / len(others)


def pride_loss(prototype: Tensor, position: int, bank_matrix: Tensor,
               tau: float = PRIDE_DEFAULT_TAU) -> Tensor:
    """InfoNCE over reference vectors: -log softmax_j(p . bank_j / tau)[i].

    prototype: (d_p,) on the graph; bank_matrix: constant (n_classes,
    d_p). Differentiable w.r.t. the prototype; a single-class bank gives
    exactly zero loss.
    """
    if tau <= 0:
        raise ConfigurationError(f"temperature must be > 0, got {tau}")
    n_classes = bank_matrix.shape[0]
    if not (0 <= position < n_classes):
        raise ConfigurationError(
            f"bank position {position} out of range [0, {n_classes})")
    col = T.reshape(prototype, (prototype.shape[0], 1))
    dots = T.scale(T.matmul(bank_matrix, col), 1.0 / tau)   # (n_classes, 1)
    log_probs = T.log_softmax(T.reshape(dots, (1, n_classes)), axis=1)
    picked = T.narrow(log_probs, 1, position, 1)
    return T.scale(T.reshape(picked, ()), -1.0)


def combined_loss(ce: Tensor, pride: Tensor, mix_param: Tensor) -> Tensor:
    """sigmoid(mix) * ce + (1 - sigmoid(mix)) * pride, mix trainable."""
    gate = T.sigmoid(mix_param)
    one = Tensor(np.ones((), dtype=gate.dtype))
    return T.add(T.mul(gate, ce), T.mul(T.sub(one, gate), pride))


class TrainingPrideBank:
    """Exponential-moving-average reference vectors over training classes.

    Updated once per episode with the episode's detached tuple-averaged
    true-class prototypes (update first, then score). Classes appear in
    the softmax only after their first update.
    """

    def __init__(self, n_classes: int, d_p: int, decay: float = EMA_DEFAULT_DECAY):
        if not (0.0 <= decay < 1.0):
            raise ConfigurationError(f"decay must be in [0, 1), got {decay}")
        self.decay = decay
        self.vectors = np.zeros((n_classes, d_p), dtype=np.float64)
        self.initialized = np.zeros(n_classes, dtype=bool)

    def update(self, class_index: int, vector: np.ndarray) -> None:
        if self.initialized[class_index]:
            self.vectors[class_index] = (self.decay * self.vectors[class_index]
                                         + (1.0 - self.decay) * vector)
        else:
            self.vectors[class_index] = vector
            self.initialized[class_index] = True

    def snapshot(self, dtype=np.float32) -> tuple[tuple[int, ...], np.ndarray]:
        """(ascending initialized class indices, their matrix copy)."""
        present = tuple(int(i) for i in np.flatnonzero(self.initialized))
        return present, self.vectors[list(present)].astype(dtype)
