"""Model assembly: initialize all trainable parameter groups, run an
episode through both flows plus fusion, and expose the losses.

Forward shape of one N-way K-shot episode with M queries per class and
tuple size omega (n_tuples = C(L, omega) per video):

1. visual: tuple cross-attention gives prototypes (NM, N, n_tuples, d_p)
   plus value-mapped query tuples (NM, n_tuples, d_p);
2. text: enhanced class-text vectors (N, d_p), inflated to prototype
   shape;
3. fusion: one of the four modes, same shape out;
4. logits: negated mean squared prototype-query distances (NM, N),
   averaged across configured tuple sizes when more than one is used.

Training objective: softmax cross-entropy over the N class slots, or a
learnable sigmoid-gated mix of cross-entropy with the InfoNCE prototype
loss fed by an EMA reference bank (see pride.py).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .episodes import Episode
from .errors import ConfigurationError, DimensionError
from .mpe import MpeConfig, MpeParams, fuse, init_mpe
from .pride import MIX_INIT, TrainingPrideBank
from .store import EmbeddingStore
from .tensor import MhaParams, Tensor
from .text import (
    SE_DEFAULT_HEADS,
    episode_class_texts,
    inflate,
    init_se,
    se_module,
)
from .visual import (
    RepCache,
    TrxParams,
    enumerate_tuples,
    init_trx,
    logits_from_prototypes,
    query_values,
    trx_prototypes,
)

PARAMS_MAGIC = b"MPPR"
PARAMS_VERSION = 1
_DTYPE_CODES = {4: np.float32, 8: np.float64}


@dataclass
class ModelConfig:
    """Architecture knobs (training schedule lives in harness.TrainConfig)."""
    omegas: tuple[int, ...] = (2,)
    d_k: int = 32
    d_p: int = 64
    se_heads: int = SE_DEFAULT_HEADS
    mpe: MpeConfig = field(default_factory=MpeConfig)
    tau: float = 0.1

    def __post_init__(self):
        if isinstance(self.omegas, list):
            self.omegas = tuple(self.omegas)
        if not self.omegas:
            raise ConfigurationError("need at least one tuple size")
        if len(set(self.omegas)) != len(self.omegas):
            raise ConfigurationError(f"duplicate tuple sizes {self.omegas}")
        if any(w < 1 for w in self.omegas):
            raise ConfigurationError(f"tuple sizes must be >= 1: {self.omegas}")
        if self.d_k < 1 or self.d_p < 1:
            raise ConfigurationError(
                f"d_k and d_p must be positive, got {self.d_k}/{self.d_p}")
        if self.tau <= 0:
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")


@dataclass
class ModelParams:
    trx: dict[int, TrxParams]          # keyed by tuple size
    se: MhaParams
    mpe: MpeParams
    mix: Tensor                        # scalar gate input, sigmoid-squashed

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """Deterministic enumeration order: trx groups ascending, se, mpe, mix."""
        named: list[tuple[str, Tensor]] = []
        for omega in sorted(self.trx):
            named.extend((f"trx{omega}.{k}", v)
                         for k, v in self.trx[omega].named_tensors())
        named.extend((f"se.{k}", v) for k, v in self.se.named_tensors())
        named.extend((f"mpe.{k}", v) for k, v in self.mpe.named_tensors())
        named.append(("mix", self.mix))
        return named

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def init_model(seed: int, dim: int, config: ModelConfig,
               dtype=T.DEFAULT_DTYPE) -> ModelParams:
    """Initialize every parameter group from one seeded stream.

    Groups draw in a fixed order (trx per tuple size ascending, then the
    text-enhancement attention, then fusion, then the loss gate), so the
    same seed always produces the same bytes.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    trx = {omega: init_trx(rng, omega, dim, config.d_k, config.d_p, dtype)
           for omega in sorted(config.omegas)}
    se = init_se(rng, dim, config.d_p, config.se_heads, dtype)
    mpe = init_mpe(rng, config.mpe, config.d_p, dtype)
    mix = Tensor(np.asarray(MIX_INIT, dtype=dtype), requires_grad=True)
    return ModelParams(trx=trx, se=se, mpe=mpe, mix=mix)


@dataclass
class EpisodeForward:
    """Everything downstream losses need from one episode forward pass."""
    logits: Tensor                      # (NM, N)
    fused: dict[int, Tensor]            # per tuple size: (NM, N, C, d_p)


class Model:
    """Bundles store, config, and params; runs episodes and 1-way passes."""

    def __init__(self, store: EmbeddingStore, config: ModelConfig,
                 params: ModelParams):
        self.store = store
        self.config = config
        self.params = params
        frames = store.manifest.frames_per_video
        self.tuples = {omega: enumerate_tuples(frames, omega)
                       for omega in config.omegas}
        self.reps = RepCache(store, self.tuples)
        if config.mpe.mode == "attention" and config.d_p % config.mpe.heads:
            raise ConfigurationError(
                f"fusion heads={config.mpe.heads} must divide d_p={config.d_p}")

    @property
    def _skip_text_flow(self) -> bool:
        # lam=0 weighted fusion is the visual tensor itself; the text
        # flow would be dead graph, so don't build it.
        return (self.config.mpe.mode == "weighted_average"
                and self.config.mpe.lam == 0.0)

    def _text_prototypes(self, template_index: int,
                         class_indices: tuple[int, ...]) -> Tensor:
        texts = episode_class_texts(self.store.text, template_index,
                                    class_indices)
        return se_module(texts, self.params.se)

    def forward_episode(self, episode: Episode) -> EpisodeForward:
        n_way, m_queries = episode.n_way, episode.m_queries
        nm = n_way * m_queries
        se_out = (None if self._skip_text_flow else
                  self._text_prototypes(episode.template_index,
                                        episode.class_indices))
        fused_by_omega: dict[int, Tensor] = {}
        logit_terms = []
        for omega in sorted(self.config.omegas):
            tuples = self.tuples[omega]
            n_tuples = len(tuples)
            trx = self.params.trx[omega]
            q_reps = self.reps.stack(omega, episode.flat_query_ids())
            s_reps = [self.reps.stack(omega, slot) for slot in episode.support]
            p_visual = trx_prototypes(q_reps, s_reps, trx, n_tuples)
            if se_out is None:
                p_fused = p_visual
            else:
                p_text = inflate(se_out, n_way, m_queries, n_tuples)
                p_fused = fuse(p_visual, p_text, self.config.mpe,
                               self.params.mpe)
            q_vals = query_values(q_reps, trx, n_tuples)
            fused_by_omega[omega] = p_fused
            logit_terms.append(logits_from_prototypes(p_fused, q_vals))
        if len(logit_terms) == 1:
            logits = logit_terms[0]
        else:
            total = logit_terms[0]
            for term in logit_terms[1:]:
                total = T.add(total, term)
            logits = T.scale(total, 1.0 / len(logit_terms))
        assert logits.shape == (nm, n_way)
        return EpisodeForward(logits=logits, fused=fused_by_omega)

    def query_true_prototypes(self, forward: EpisodeForward,
                              episode: Episode) -> Tensor:
        """Per query, the tuple-averaged fused prototype of its true class,
        averaged across tuple sizes: (NM, d_p). Differentiable."""
        n_way, m_queries = episode.n_way, episode.m_queries
        nm = n_way * m_queries
        one_hot = np.zeros((nm, n_way, 1, 1), dtype=np.float64)
        one_hot[np.arange(nm), episode.query_labels] = 1.0
        terms = []
        for omega in sorted(forward.fused):
            p_fused = forward.fused[omega]
            mask = Tensor(one_hot.astype(p_fused.dtype))
            own = T.sum_(T.mul(p_fused, mask), axis=1)     # (NM, C, d_p)
            terms.append(T.mean(own, axis=1))              # (NM, d_p)
        if len(terms) == 1:
            return terms[0]
        total = terms[0]
        for term in terms[1:]:
            total = T.add(total, term)
        return T.scale(total, 1.0 / len(terms))

    def single_video_prototype(self, query_video: str,
                               support_videos: tuple[str, ...],
                               class_index: int,
                               template_index: int) -> np.ndarray:
        """Tuple-averaged fused prototype of one video as the query of a
        1-way episode; detached (d_p,) float64 vector."""
        se_out = (None if self._skip_text_flow else
                  self._text_prototypes(template_index, (class_index,)))
        per_omega = []
        for omega in sorted(self.config.omegas):
            n_tuples = len(self.tuples[omega])
            q_reps = self.reps.stack(omega, [query_video])
            s_reps = [self.reps.stack(omega, support_videos)]
            p_visual = trx_prototypes(q_reps, s_reps,
                                      self.params.trx[omega], n_tuples)
            if se_out is None:
                p_fused = p_visual
            else:
                p_text = inflate(se_out, 1, 1, n_tuples)
                p_fused = fuse(p_visual, p_text, self.config.mpe,
                               self.params.mpe)
            per_omega.append(p_fused.data[0, 0].mean(axis=0))  # (d_p,)
        return np.mean(per_omega, axis=0).astype(np.float64)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def episode_ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the episode's query rows."""
    nm, n_way = logits.shape
    if labels.shape != (nm,):
        raise DimensionError(
            f"labels shape {labels.shape} does not match {nm} query rows")
    one_hot = np.zeros((nm, n_way), dtype=np.float64)
    one_hot[np.arange(nm), labels] = 1.0
    log_probs = T.log_softmax(logits, axis=1)
    picked = T.sum_(T.mul(log_probs, Tensor(one_hot.astype(logits.dtype))))
    return T.scale(picked, -1.0 / nm)


def episode_pride_loss(true_prototypes: Tensor, positions: np.ndarray,
                       bank_matrix: Tensor, tau: float) -> Tensor:
    """Mean InfoNCE over query rows against the reference bank.

    true_prototypes: (NM, d_p); positions: per-row index into the bank;
    bank_matrix: constant (B, d_p). Equals the mean of per-row
    pride.pride_loss values.
    """
    if tau <= 0:
        raise ConfigurationError(f"temperature must be > 0, got {tau}")
    nm = true_prototypes.shape[0]
    n_bank = bank_matrix.shape[0]
    if positions.shape != (nm,):
        raise DimensionError(
            f"positions shape {positions.shape} does not match {nm} rows")
    dots = T.scale(T.matmul(true_prototypes, T.transpose(bank_matrix)),
                   1.0 / tau)                              # (NM, B)
    log_probs = T.log_softmax(dots, axis=1)
    one_hot = np.zeros((nm, n_bank), dtype=np.float64)
    one_hot[np.arange(nm), positions] = 1.0
    picked = T.sum_(T.mul(log_probs, Tensor(one_hot.astype(dots.dtype))))
    return T.scale(picked, -1.0 / nm)


def update_bank_from_episode(bank: TrainingPrideBank, episode: Episode,
                             true_prototypes: Tensor) -> None:
    """EMA-update each episode class with the mean of its queries'
    detached prototypes."""
    vectors = true_prototypes.data
    m = episode.m_queries
    for slot, class_index in enumerate(episode.class_indices):
        block = vectors[slot * m:(slot + 1) * m].astype(np.float64)
        bank.update(class_index, block.mean(axis=0))


# ---------------------------------------------------------------------------
# parameter snapshots (byte-stable)
# ---------------------------------------------------------------------------

def params_to_bytes(params: ModelParams) -> bytes:
    """Serialize all parameter tensors to a deterministic binary blob.

    Layout: magic, u32 version, u32 tensor count; per tensor: u16 name
    length + UTF-8 name, u8 itemsize code, u8 ndim, u32 dims, raw
    little-endian data. No timestamps, so equal params give equal bytes.
    """
    out = io.BytesIO()
    named = params.named_tensors()
    out.write(PARAMS_MAGIC)
    out.write(struct.pack("<II", PARAMS_VERSION, len(named)))
    for name, tensor in named:
        encoded = name.encode("utf-8")
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        itemsize = tensor.data.dtype.itemsize
        out.write(struct.pack("<BB", itemsize, tensor.data.ndim))
        for extent in tensor.data.shape:
            out.write(struct.pack("<I", extent))
        kind = "<f4" if itemsize == 4 else "<f8"
        out.write(np.ascontiguousarray(tensor.data, dtype=kind).tobytes())
    return out.getvalue()


def params_from_bytes(params: ModelParams, blob: bytes) -> None:
    """Load a params_to_bytes blob into an existing parameter set in place.

    Names, shapes, and dtypes must match the current structure exactly.
    """
    view = memoryview(blob)

    def need(offset: int, nbytes: int) -> None:
        if offset + nbytes > len(blob):
            raise ConfigurationError(
                f"parameter blob truncated: need {offset + nbytes} bytes, "
                f"have {len(blob)}")

    need(0, 12)
    if bytes(view[:4]) != PARAMS_MAGIC:
        raise ConfigurationError("parameter blob has wrong magic bytes")
    version, count = struct.unpack_from("<II", view, 4)
    if version != PARAMS_VERSION:
        raise ConfigurationError(f"unsupported parameter blob version {version}")
    named = dict(params.named_tensors())
    if count != len(named):
        raise ConfigurationError(
            f"blob has {count} tensors, params have {len(named)}")
    offset = 12
    for _ in range(count):
        need(offset, 2)
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        need(offset, name_len + 2)
        name = bytes(view[offset:offset + name_len]).decode("utf-8")
        offset += name_len
        itemsize, ndim = struct.unpack_from("<BB", view, offset)
        offset += 2
        need(offset, 4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", view, offset) if ndim else ()
        offset += 4 * ndim
        if name not in named:
            raise ConfigurationError(f"blob tensor {name!r} unknown to params")
        target = named[name]
        dtype = _DTYPE_CODES.get(itemsize)
        if dtype is None or np.dtype(dtype) != target.data.dtype:
            raise ConfigurationError(
                f"blob tensor {name!r} dtype mismatch (itemsize {itemsize})")
        if tuple(shape) != target.data.shape:
            raise ConfigurationError(
                f"blob tensor {name!r} shape {tuple(shape)} does not match "
                f"{target.data.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * itemsize if ndim else itemsize
        need(offset, nbytes)
        flat = np.frombuffer(view[offset:offset + nbytes],
                             dtype=f"<f{itemsize}")
        offset += nbytes
        target.data = flat.reshape(shape).astype(target.data.dtype).copy()
    if offset != len(blob):
        raise ConfigurationError(
            f"parameter blob has {len(blob) - offset} trailing bytes")


def save_params(params: ModelParams, path: str | Path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(params: ModelParams, path: str | Path) -> None:
    params_from_bytes(params, Path(path).read_bytes())
